"""The reference synthetic fixture used by the test and acceptance suites.

Gaussian cells with task/property correlation 0.3 at ratio 0.5, a
one-hidden-layer MLP of width 32, 20 shadows and 40 victims per
distribution, alpha0 = 0.5 against alpha1 = 0.2, three trials.
"""
from __future__ import annotations

from .config import ExperimentConfig, parse_config

REFERENCE = {
    "schema_version": 1,
    "name": "reference",
    "master_seed": 0,
    "data": {"kind": "synthetic", "n": 12000, "property_ratio": 0.5, "feature_dim": 6, "phi": 0.3},
    "victim_fraction": 0.5,
    "query_fraction": 0.25,
    "alpha0": 0.5,
    "alpha1_grid": [0.2],
    "train_size": 1000,
    "victims_per_side": 40,
    "shadows_per_side": 20,
    "trials": 3,
    "query_size": 200,
    "attacks": [{"kind": "kl", "pair_fraction": 0.8, "vote_mode": "weighted"}, {"kind": "threshold"}],
    "victim_model": {"arch": "mlp", "hidden_sizes": [32], "epochs": 20, "learning_rate": 0.1, "batch_size": 64},
}


def reference_config(**overrides) -> ExperimentConfig:
    return parse_config({**REFERENCE, **overrides})
