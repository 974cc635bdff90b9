"""End-to-end experiment orchestration.

Pipeline per experiment: build the data pool, split it into victim and
adversary halves, then for every ``alpha1`` in the grid and every trial
train victim and shadow fleets at ``alpha0`` and ``alpha1``, build query
sets from the adversary pool, run each attack on every victim and score it.
Per-``alpha1`` accuracies are the median over trials; grid means are the
mean of those medians.

All randomness is derived from ``master_seed``.  Model training is farmed
out as independent tasks, so results do not depend on ``jobs``.
"""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, seeding
from .attacks import (
    QueryBundle,
    fit_meta_classifier,
    fit_threshold,
    kl_attack_many,
    label_only_transform,
    neighborhood_confidence,
    verdict_accuracy,
)
from .config import ExperimentConfig, ModelConfig, SyntheticData, attack_label
from .datagen import (
    BaseDistributionSpec,
    DatasetTable,
    RatioTransformer,
    apply_ratio,
    augment_oversample,
    load_csv,
    oversample,
    poison_labels,
    split_victim_adversary,
    synth_generate,
    undersample,
)
from .errors import DistInfError, ExperimentFailed
from .metrics import fairness_impact, mean_over_grid, median_over_trials, nleaked_report
from .models import accuracy, predict_labels, predict_proba, _train_member

log = logging.getLogger(__name__)

VICTIM, SHADOW = "victims", "shadows"


# data -------------------------------------------------------------------


def build_dataset(config: ExperimentConfig) -> DatasetTable:
    d = config.data
    if isinstance(d, SyntheticData):
        spec = BaseDistributionSpec.with_correlation(
            d.phi,
            feature_dim=d.feature_dim,
            task_shift=d.task_shift,
            property_shift=d.property_shift,
            interaction_shift=d.interaction_shift,
            cell_cov_scale=d.cell_cov_scale,
        )
        return synth_generate(spec, d.n, d.property_ratio, seeding.derive(config.master_seed, "data"))
    return load_csv(d.path, d.task_column, d.property_column)


def build_pools(config: ExperimentConfig) -> dict[str, DatasetTable]:
    """Victim pool, adversary training pool and adversary query pool (all disjoint).

    Query rows are held out from shadow training so that accuracies and
    predictions on them are not inflated by memorisation.
    """
    data = build_dataset(config)
    victim, adversary = split_victim_adversary(data, config.victim_fraction, seeding.derive(config.master_seed, "split"))
    adv_train, adv_query = split_victim_adversary(
        adversary, 1.0 - config.query_fraction, seeding.derive(config.master_seed, "split-query")
    )
    return {"victim": victim, "adversary": adv_train, "query": adv_query}


def apply_defense(data: DatasetTable, seed: int, kind: str, target: float, noise_sigma: float, r: float) -> DatasetTable:
    if kind == "undersample":
        return undersample(data, target, seed)
    if kind == "oversample":
        return oversample(data, target, seed)
    if kind == "augment":
        return augment_oversample(data, target, noise_sigma, seed)
    if kind == "poison":
        return poison_labels(data, r, seed)
    raise DistInfError(f"unknown defense {kind!r}")


# training tasks -----------------------------------------------------------


@dataclass(frozen=True)
class FleetKey:
    role: str
    alpha: float
    trial: int
    defended: bool


@dataclass(frozen=True)
class FleetPlan:
    key: FleetKey
    pool: str
    model: ModelConfig
    size: int
    count: int
    master_seed: int
    defense: tuple | None
    checkpoints: tuple | None


_WORKER_POOLS: dict = {}


def _init_worker(pools: dict) -> None:
    _WORKER_POOLS.clear()
    _WORKER_POOLS.update(pools)


def _run_member(item: tuple, pools: dict | None = None):
    plan, index = item
    pools = _WORKER_POOLS if pools is None else pools
    prepare = None
    if plan.defense is not None:
        prepare = partial(_prepare_defense, defense=plan.defense)
    return _train_member(
        index,
        spec_template=plan.model.to_spec(),
        pool=pools[plan.pool],
        t=RatioTransformer(plan.key.alpha, plan.size),
        master_seed=plan.master_seed,
        prepare=prepare,
        checkpoints=plan.checkpoints,
    )


def _prepare_defense(data: DatasetTable, seed: int, defense: tuple) -> DatasetTable:
    return apply_defense(data, seed, *defense)


def run_tasks(items: list, pools: dict, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [_run_member(it, pools) for it in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(pools,)) as ex:
        return list(ex.map(_run_member, items, chunksize=max(1, len(items) // (4 * jobs))))


# report -----------------------------------------------------------------


@dataclass
class VerdictRow:
    victim_id: str
    attack: str
    alpha0: float
    alpha1: float
    predicted_bit: int
    score: float
    trial: int
    seed: int

    COLUMNS = ("victim_id", "attack", "alpha0", "alpha1", "predicted_bit", "score", "trial", "seed")

    def as_row(self) -> list:
        return [self.victim_id, self.attack, repr(self.alpha0), repr(self.alpha1), self.predicted_bit, repr(self.score), self.trial, self.seed]


@dataclass
class ExperimentReport:
    config: dict
    cells: list = field(default_factory=list)
    grid_means: list = field(default_factory=list)
    task_accuracy: list = field(default_factory=list)
    fairness: list = field(default_factory=list)
    verdicts: list = field(default_factory=list)
    series: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "config": self.config,
            "cells": self.cells,
            "grid_means": self.grid_means,
            "task_accuracy": self.task_accuracy,
            "fairness": self.fairness,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def final_epoch(self):
        return self.cells[-1]["epoch"] if self.cells else None

    def summary_rows(self) -> list[dict]:
        last = self.final_epoch()
        return [c for c in self.cells if c["epoch"] == last]

    def grid_mean(self, attack: str, epoch=None) -> float:
        epoch = self.final_epoch() if epoch is None else epoch
        for g in self.grid_means:
            if g["attack"] == attack and g["epoch"] == epoch:
                return g["accuracy"]
        raise KeyError(attack)

    def median_accuracy(self, attack: str, alpha1: float, epoch=None) -> float:
        epoch = self.final_epoch() if epoch is None else epoch
        for c in self.cells:
            if c["attack"] == attack and c["alpha1"] == alpha1 and c["epoch"] == epoch:
                return c["accuracy_median"]
        raise KeyError((attack, alpha1))


# experiment -------------------------------------------------------------


class _Experiment:
    def __init__(self, config: ExperimentConfig, jobs: int = 1, checkpoints: Sequence[int] | None = None):
        self.cfg = config
        self.jobs = max(1, int(jobs))
        self.checkpoints = tuple(checkpoints) if checkpoints else None
        self.seed = config.master_seed
        self.fleets: dict[FleetKey, list] = {}
        self.n_trained = 0
        self.pools = build_pools(config)

    # planning ---------------------------------------------------------

    def _defense_tuple(self):
        d = self.cfg.defense
        return (d.kind, self.cfg.defense_target, d.noise_sigma, d.r)

    def _plan(self, key: FleetKey) -> FleetPlan:
        cfg = self.cfg
        akey = seeding.alpha_key(key.alpha)
        if key.role == VICTIM:
            # baseline (undefended) victims reuse the defended fleet's seeds
            return FleetPlan(
                key,
                "victim",
                cfg.victim_model,
                cfg.train_size,
                cfg.victims_per_side,
                seeding.derive(self.seed, VICTIM, key.trial, akey),
                self._defense_tuple() if key.defended else None,
                self.checkpoints,
            )
        return FleetPlan(
            key,
            "adversary",
            cfg.adversary,
            cfg.train_size,
            cfg.shadows_per_side,
            seeding.derive(self.seed, SHADOW, key.trial, akey),
            self._defense_tuple() if key.defended else None,
            None,
        )

    def _keys_for(self, alpha1: float) -> list[FleetKey]:
        cfg = self.cfg
        defended = cfg.defense is not None
        same_setup = defended and cfg.defense.adversary_same_setup
        keys = []
        for trial in range(cfg.trials):
            for a in (cfg.alpha0, alpha1):
                keys.append(FleetKey(VICTIM, a, trial, defended))
                keys.append(FleetKey(SHADOW, a, trial, same_setup))
                if cfg.fairness:
                    keys.append(FleetKey(VICTIM, a, trial, False))
        return keys

    def train_for(self, alpha1: float) -> None:
        todo = [k for k in dict.fromkeys(self._keys_for(alpha1)) if k not in self.fleets]
        plans = [self._plan(k) for k in todo]
        items = [(p, i) for p in plans for i in range(p.count)]
        log.info("alpha1=%s: training %d models", alpha1, len(items))
        try:
            results = run_tasks(items, self.pools, self.jobs)
        except DistInfError as exc:
            raise ExperimentFailed(f"training failed for alpha1={alpha1}: {exc}", context={"alpha1": alpha1}) from exc
        pos = 0
        for p in plans:
            self.fleets[p.key] = results[pos : pos + p.count]
            pos += p.count
        self.n_trained += len(items)

    def victims(self, alpha: float, trial: int, ckpt: int | None, defended: bool | None = None) -> list:
        if defended is None:
            defended = self.cfg.defense is not None
        fleet = self.fleets[FleetKey(VICTIM, alpha, trial, defended)]
        if self.checkpoints is None:
            return fleet
        return [snaps[ckpt] for snaps in fleet]

    def shadows(self, alpha: float, trial: int) -> list:
        same = self.cfg.defense is not None and self.cfg.defense.adversary_same_setup
        return self.fleets[FleetKey(SHADOW, alpha, trial, same)]

    def member_seed(self, role: str, alpha: float, trial: int, index: int) -> int:
        from .models import fleet_member_seeds

        master = seeding.derive(self.seed, role, trial, seeding.alpha_key(alpha))
        return fleet_member_seeds(master, index)[2]

    # access -----------------------------------------------------------

    def access_preds(self, model, x: np.ndarray, seed: int) -> np.ndarray:
        acc = self.cfg.access
        if acc.mode == "confidence":
            return predict_proba(model, x)
        if acc.mode == "label_only_direct":
            return label_only_transform(predict_labels(model, x), acc.epsilon)
        return neighborhood_confidence(model, x, acc.k, acc.sigma, seed, acc.epsilon)

    def _stack(self, models: list, x: np.ndarray, tag: str, trial: int, alpha: float) -> np.ndarray:
        return np.stack(
            [self.access_preds(m, x, seeding.derive(self.seed, f"access:{tag}", trial, seeding.alpha_key(alpha), i)) for i, m in enumerate(models)]
        )

    # evaluation -------------------------------------------------------

    def evaluate_cell(self, alpha1: float, trial: int, ckpt_index: int | None) -> dict:
        cfg = self.cfg
        a0 = cfg.alpha0
        akey = seeding.alpha_key(alpha1)
        adv = self.pools["query"]
        half = cfg.query_size // 2
        q0 = apply_ratio(adv, RatioTransformer(a0, half), seeding.derive(self.seed, "query", trial, akey, 0))
        q1 = apply_ratio(adv, RatioTransformer(alpha1, half), seeding.derive(self.seed, "query", trial, akey, 1))
        eval_table = DatasetTable.concat([q0, q1])
        bundle = QueryBundle.from_halves(q0.features, q1.features, source=f"trial{trial}:alpha1={alpha1}")

        v0 = self.victims(a0, trial, ckpt_index)
        v1 = self.victims(alpha1, trial, ckpt_index)
        s0 = self.shadows(a0, trial)
        s1 = self.shadows(alpha1, trial)
        victims = v0 + v1
        truth = [0] * len(v0) + [1] * len(v1)
        ids = [f"g0-{i:03d}" for i in range(len(v0))] + [f"g1-{i:03d}" for i in range(len(v1))]
        if ckpt_index is not None:
            ids = [f"{vid}@e{self.checkpoints[ckpt_index]}" for vid in ids]
        seeds = [self.member_seed(VICTIM, a0, trial, i) for i in range(len(v0))] + [
            self.member_seed(VICTIM, alpha1, trial, i) for i in range(len(v1))
        ]

        out = {"accuracy": {}, "verdicts": []}
        cache = {}
        for attack in cfg.attacks:
            label = attack_label(attack)
            if attack.kind == "kl":
                if "kl" not in cache:
                    cache["kl"] = (
                        self._stack(victims, bundle.features, "victim-q", trial, alpha1),
                        self._stack(s0, bundle.features, "shadow0-q", trial, alpha1),
                        self._stack(s1, bundle.features, "shadow1-q", trial, alpha1),
                    )
                vp, g0, g1 = cache["kl"]
                verdicts = kl_attack_many(
                    vp, g0, g1,
                    pair_fraction=attack.pair_fraction,
                    vote_mode=attack.vote_mode,
                    seed=seeding.derive(self.seed, "pairs", trial, akey),
                    normalize=attack.normalize,
                    flip=attack.flip,
                    floor=attack.floor,
                )
            elif attack.kind == "threshold":
                rule = fit_threshold([accuracy(m, eval_table) for m in s0], [accuracy(m, eval_table) for m in s1])
                verdicts = [rule.verdict(accuracy(m, eval_table)) for m in victims]
            else:
                zq = apply_ratio(
                    adv,
                    RatioTransformer((a0 + alpha1) / 2.0, attack.query_size),
                    seeding.derive(self.seed, "zto-query", trial, akey),
                )
                fp = lambda models, tag: self._stack(models, zq.features, tag, trial, alpha1).reshape(len(models), -1)
                meta = fit_meta_classifier(
                    fp(s0, "shadow0-z"),
                    fp(s1, "shadow1-z"),
                    attack.meta_model.to_spec(seeding.derive(self.seed, "meta", trial, akey)),
                )
                verdicts = [meta.verdict(f) for f in fp(victims, "victim-z")]
            bits = [v.predicted_bit for v in verdicts]
            out["accuracy"][label] = verdict_accuracy(bits[: len(v0)], bits[len(v0) :])
            for vid, v, sd in zip(ids, verdicts, seeds):
                out["verdicts"].append(VerdictRow(vid, label, a0, alpha1, v.predicted_bit, v.score, trial, sd))
        out["task_accuracy"] = {
            "g0": float(np.mean([accuracy(m, eval_table) for m in v0])),
            "g1": float(np.mean([accuracy(m, eval_table) for m in v1])),
        }
        if cfg.fairness and ckpt_index in (None, len(self.checkpoints or ()) - 1):
            base = self.victims(alpha1, trial, ckpt_index, defended=False)
            out["fairness"] = fairness_impact(base, v1, eval_table).to_dict()
        return out

    def run(self) -> ExperimentReport:
        cfg = self.cfg
        report = ExperimentReport(config=cfg.to_dict())
        labels = [attack_label(a) for a in cfg.attacks]
        ckpts = list(range(len(self.checkpoints))) if self.checkpoints else [None]
        epoch_of = (lambda c: cfg.victim_model.epochs) if self.checkpoints is None else (lambda c: self.checkpoints[c])
        per_cell = {}
        for alpha1 in cfg.alpha1_grid:
            try:
                self.train_for(alpha1)
                for c in ckpts:
                    for trial in range(cfg.trials):
                        per_cell[(c, alpha1, trial)] = self.evaluate_cell(alpha1, trial, c)
            except ExperimentFailed as exc:
                exc.partial = self._finish(report, per_cell, labels, ckpts, epoch_of, partial=True)
                raise
            except DistInfError as exc:
                report = self._finish(report, per_cell, labels, ckpts, epoch_of, partial=True)
                raise ExperimentFailed(f"alpha1={alpha1}: {exc}", partial=report, context={"alpha1": alpha1}) from exc
        return self._finish(report, per_cell, labels, ckpts, epoch_of)

    def _finish(self, report, per_cell, labels, ckpts, epoch_of, partial: bool = False) -> ExperimentReport:
        cfg = self.cfg
        report.cells, report.grid_means, report.task_accuracy, report.fairness = [], [], [], []
        report.verdicts, report.series = [], []
        done_alphas = [a for a in cfg.alpha1_grid if all((c, a, t) in per_cell for c in ckpts for t in range(cfg.trials))]
        for c in ckpts:
            epoch = epoch_of(c)
            for label in labels:
                medians = []
                for a in done_alphas:
                    trial_acc = [per_cell[(c, a, t)]["accuracy"][label] for t in range(cfg.trials)]
                    med = median_over_trials(trial_acc)
                    leak = nleaked_report(med, cfg.alpha0, a)
                    medians.append((a, med))
                    report.cells.append(
                        {
                            "epoch": epoch,
                            "alpha0": cfg.alpha0,
                            "alpha1": a,
                            "attack": label,
                            "trial_accuracies": trial_acc,
                            "accuracy_median": med,
                            "nleaked": leak.n_leaked,
                            "saturated": leak.saturated,
                        }
                    )
                    report.series.append(("accuracy_vs_alpha1", label, epoch, a, med))
                    report.series.append(("nleaked_vs_alpha1", label, epoch, a, leak.n_leaked))
                if medians:
                    mean_acc = mean_over_grid(medians)
                    mean_leak = mean_over_grid([(a, nleaked_report(m, cfg.alpha0, a).n_leaked) for a, m in medians])
                    report.grid_means.append({"epoch": epoch, "attack": label, "accuracy": mean_acc, "nleaked": mean_leak})
                    if self.checkpoints:
                        report.series.append(("accuracy_vs_epoch", label, epoch, epoch, mean_acc))
            for a in done_alphas:
                for t in range(cfg.trials):
                    cell = per_cell[(c, a, t)]
                    report.verdicts.extend(cell["verdicts"])
                    report.task_accuracy.append({"epoch": epoch, "alpha1": a, "trial": t, **cell["task_accuracy"]})
                    if "fairness" in cell:
                        report.fairness.append({"epoch": epoch, "alpha1": a, "trial": t, **cell["fairness"]})
        report.metadata = {
            "package_version": __version__,
            "schema_version": cfg.schema_version,
            "numpy_version": np.__version__,
            "models_trained": self.n_trained,
            "complete": not partial,
        }
        return report


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentReport:
    return _Experiment(config, jobs).run()


def run_epoch_sweep(config: ExperimentConfig, jobs: int = 1) -> tuple[list[tuple[int, str, float]], ExperimentReport]:
    """Evaluate attacks on victim snapshots at each configured epoch.

    Shadows are trained to their own configured epochs.  Returns the
    ``(epoch, attack, mean accuracy)`` series and the full report.
    """
    if not config.epoch_checkpoints:
        raise DistInfError("config has no epoch_checkpoints")
    report = _Experiment(config, jobs, config.epoch_checkpoints).run()
    series = [(g["epoch"], g["attack"], g["accuracy"]) for g in report.grid_means]
    return series, report


def run_architecture_grid(
    config: ExperimentConfig,
    victim_specs: Sequence[ModelConfig],
    adversary_specs: Sequence[ModelConfig],
    jobs: int = 1,
) -> dict:
    """Mean accuracy for every (victim architecture, adversary architecture) pair.

    All cells share the config's master seed, hence the same data draws.
    Returns ``{attack: matrix}`` with rows indexed by victim spec.
    """
    if not victim_specs or not adversary_specs:
        raise DistInfError("need at least one victim and one adversary spec")
    labels = [attack_label(a) for a in config.attacks]
    grid = {label: [[None] * len(adversary_specs) for _ in victim_specs] for label in labels}
    reports = []
    for i, vs in enumerate(victim_specs):
        for j, ads in enumerate(adversary_specs):
            cfg = config.model_copy(update={"victim_model": vs, "adversary_model": ads, "epoch_checkpoints": None})
            rep = run_experiment(cfg, jobs)
            reports.append(((i, j), rep))
            for label in labels:
                grid[label][i][j] = rep.grid_mean(label)
    return {"matrix": grid, "reports": reports}


# outputs ------------------------------------------------------------------


def _write_csv(path: Path, header, rows) -> None:
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


SUMMARY_COLUMNS = ("alpha0", "alpha1", "attack", "accuracy_median", "nleaked", "trials", "saturated_flag")
SERIES_COLUMNS = ("series", "attack", "epoch", "x", "y")


def emit_outputs(report: ExperimentReport, out_dir) -> list[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    trials = report.config.get("trials")
    paths = [out / "report.json", out / "summary.csv", out / "verdicts.csv", out / "series.csv"]
    try:
        paths[0].write_text(report.to_json(), encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {paths[0]}: {exc}") from exc
    _write_csv(
        paths[1],
        SUMMARY_COLUMNS,
        (
            [repr(c["alpha0"]), repr(c["alpha1"]), c["attack"], repr(c["accuracy_median"]), repr(c["nleaked"]), trials, int(c["saturated"])]
            for c in report.summary_rows()
        ),
    )
    _write_csv(paths[2], VerdictRow.COLUMNS, (v.as_row() for v in report.verdicts))
    _write_csv(paths[3], SERIES_COLUMNS, ([s, a, e, repr(x), repr(y)] for s, a, e, x, y in report.series))
    return paths
