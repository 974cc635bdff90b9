"""Leakage metrics (n_leaked), grid aggregation and fairness impact."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from statistics import median
from typing import Sequence

import numpy as np

from .datagen import DatasetTable
from .errors import DistInfError
from .models import predict_labels

OMEGA_CAP = 1.0 - 1e-6


@dataclass(frozen=True)
class LeakageReport:
    alpha0: float
    alpha1: float
    accuracy: float
    n_leaked: float
    saturated: bool = False


def _log_base(alpha0: float, alpha1: float) -> float:
    for a in (alpha0, alpha1):
        if not 0.0 <= a <= 1.0:
            raise DistInfError(f"ratios must lie in [0, 1], got {a}")
    if alpha0 == alpha1:
        raise DistInfError("alpha0 and alpha1 must differ")
    lo, hi = min(alpha0, alpha1), max(alpha0, alpha1)
    ratio = max(lo / hi, (1.0 - hi) / (1.0 - lo))
    if ratio <= 0.0:
        raise DistInfError(f"n_leaked is undefined for the pair ({alpha0}, {alpha1})")
    return math.log(ratio)


def nleaked_report(omega: float, alpha0: float, alpha1: float) -> LeakageReport:
    if not 0.0 <= omega <= 1.0:
        raise DistInfError(f"accuracy must lie in [0, 1], got {omega}")
    denom = _log_base(alpha0, alpha1)
    if omega <= 0.5:
        return LeakageReport(alpha0, alpha1, omega, 0.0)
    saturated = omega > OMEGA_CAP
    w = min(omega, OMEGA_CAP)
    value = math.log(4.0 * w * (1.0 - w)) / denom
    return LeakageReport(alpha0, alpha1, omega, max(value, 0.0), saturated)


def nleaked_binary(omega: float, alpha0: float, alpha1: float) -> float:
    """Equivalent number of direct samples for a binary distinguishing accuracy.

    Accuracies at or below chance map to 0; accuracies above ``1 - 1e-6``
    are capped there (see :func:`nleaked_report` for the saturation flag).
    """
    return nleaked_report(omega, alpha0, alpha1).n_leaked


def nleaked_regression(mse: float, alpha: float) -> float:
    if not mse > 0:
        raise DistInfError(f"mse must be positive, got {mse}")
    if not 0.0 <= alpha <= 1.0:
        raise DistInfError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * (1.0 - alpha) / mse


def median_over_trials(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise DistInfError("no trial values to aggregate")
    return float(median(values))


def mean_over_grid(per_alpha_values: Sequence[tuple[float, float]]) -> float:
    if len(per_alpha_values) == 0:
        raise DistInfError("empty grid")
    return float(math.fsum(v for _, v in per_alpha_values) / len(per_alpha_values))


# fairness ---------------------------------------------------------------


@dataclass
class FairnessDelta:
    group_attribute: str
    baseline: dict
    defended: dict
    relative_change: dict
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "group_attribute": self.group_attribute,
            "baseline": self.baseline,
            "defended": self.defended,
            "relative_change_pct": self.relative_change,
            "flags": list(self.flags),
        }


def precision_recall(pred: np.ndarray, truth: np.ndarray) -> tuple[float | None, float | None]:
    tp = int(np.sum((pred == 1) & (truth == 1)))
    fp = int(np.sum((pred == 1) & (truth == 0)))
    fn = int(np.sum((pred == 0) & (truth == 1)))
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    return precision, recall


def _fleet_group_stats(fleet, data: DatasetTable, group: int, tag: str, flags: list) -> dict:
    mask = data.property_attrs == group
    x, y = data.features[mask], data.task_labels[mask]
    precs, recs = [], []
    for model in fleet:
        p, r = precision_recall(predict_labels(model, x), y)
        if p is not None:
            precs.append(p)
        if r is not None:
            recs.append(r)
    if len(precs) < len(fleet):
        flags.append(f"UndefinedPrecision:{tag}:group={group}")
    if len(recs) < len(fleet):
        flags.append(f"UndefinedRecall:{tag}:group={group}")
    return {
        "precision": float(np.mean(precs)) if precs else None,
        "recall": float(np.mean(recs)) if recs else None,
    }


def _relative(new: float | None, old: float | None) -> float | None:
    if new is None or old is None or old == 0:
        return None
    return (new - old) / old * 100.0


def fairness_impact(baseline_fleet, defended_fleet, eval_data: DatasetTable, group_attribute: str = "property") -> FairnessDelta:
    """Per-group precision/recall of the task prediction, baseline vs defended.

    Groups are the values of the property attribute.  Models whose precision
    (or recall) is undefined on a group are left out of that group's mean and
    the group is flagged.
    """
    if not baseline_fleet or not defended_fleet:
        raise DistInfError("both fleets must be non-empty")
    if np.unique(eval_data.property_attrs).size < 2:
        raise DistInfError("eval data must contain both group values")
    flags: list[str] = []
    base, dfd, rel = {}, {}, {}
    for g in (0, 1):
        key = str(g)
        base[key] = _fleet_group_stats(baseline_fleet, eval_data, g, "baseline", flags)
        dfd[key] = _fleet_group_stats(defended_fleet, eval_data, g, "defended", flags)
        rel[key] = {m: _relative(dfd[key][m], base[key][m]) for m in ("precision", "recall")}
    return FairnessDelta(group_attribute, base, dfd, rel, flags)
