"""Tabular data: synthesis, ratio transformers, splits, re-sampling defenses.

Records carry a feature vector, a binary task label and a binary property
attribute.  A distribution over records is a mixture
``alpha * D+ + (1 - alpha) * D-`` where ``D+``/``D-`` are the records with
property attribute 1/0; the transformers here move a table to a chosen
``alpha`` by sampling within each attribute class.
"""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateColumn,
    DistInfError,
    InsufficientData,
    MissingColumn,
    NonBinaryLabel,
    NonNumericFeature,
)


def round_half_up(x: float) -> int:
    # the epsilon absorbs products like 0.35 * 10 == 3.4999999999999996
    return int(math.floor(x + 0.5 + 1e-9))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DatasetTable:
    """Immutable labelled table.

    ``row_ids`` identify the source row each record came from, so splits and
    re-sampling can be audited; duplicated or augmented rows keep the id of
    the row they were copied from.
    """

    features: np.ndarray
    task_labels: np.ndarray
    property_attrs: np.ndarray
    source_seed: int = 0
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DistInfError(f"features must be 2-D, got shape {x.shape}")
        y = np.asarray(self.task_labels, dtype=np.int64).reshape(-1)
        p = np.asarray(self.property_attrs, dtype=np.int64).reshape(-1)
        n = x.shape[0]
        if n < 1 or y.shape[0] != n or p.shape[0] != n:
            raise DistInfError(
                f"column lengths disagree or are empty: {n}, {y.shape[0]}, {p.shape[0]}"
            )
        if not (np.isin(y, (0, 1)).all() and np.isin(p, (0, 1)).all()):
            raise NonBinaryLabel("task labels and property attributes must be 0/1")
        ids = np.arange(n, dtype=np.int64) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        if ids.shape != (n,):
            raise DistInfError("row_ids length must match the table")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "task_labels", _frozen(y))
        object.__setattr__(self, "property_attrs", _frozen(p))
        object.__setattr__(self, "row_ids", _frozen(ids))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def property_ratio(self) -> float:
        return float(self.property_attrs.mean())

    def take(self, idx) -> "DatasetTable":
        idx = np.asarray(idx, dtype=np.int64)
        return DatasetTable(
            self.features[idx],
            self.task_labels[idx],
            self.property_attrs[idx],
            self.source_seed,
            self.row_ids[idx],
        )

    def replace(self, **changes) -> "DatasetTable":
        fields = dict(
            features=self.features,
            task_labels=self.task_labels,
            property_attrs=self.property_attrs,
            source_seed=self.source_seed,
            row_ids=self.row_ids,
        )
        fields.update(changes)
        return DatasetTable(**fields)

    def to_bytes(self) -> bytes:
        parts = [
            np.asarray(self.features.shape, dtype="<i8").tobytes(),
            self.features.astype("<f8").tobytes(),
            self.task_labels.astype("<i8").tobytes(),
            self.property_attrs.astype("<i8").tobytes(),
            self.row_ids.astype("<i8").tobytes(),
            int(self.source_seed).to_bytes(16, "little", signed=True),
        ]
        return b"".join(parts)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def equals(self, other: "DatasetTable") -> bool:
        return self.to_bytes() == other.to_bytes()

    @staticmethod
    def concat(tables: list["DatasetTable"]) -> "DatasetTable":
        return DatasetTable(
            np.concatenate([t.features for t in tables]),
            np.concatenate([t.task_labels for t in tables]),
            np.concatenate([t.property_attrs for t in tables]),
            tables[0].source_seed,
            np.concatenate([t.row_ids for t in tables]),
        )


@dataclass(frozen=True)
class BaseDistributionSpec:
    """Gaussian cells indexed by (property, task).

    ``cell_means[b][t]`` is the feature mean for property ``b`` and task
    label ``t``; ``task_given_property[b]`` is ``p(task=1 | property=b)``.
    """

    feature_dim: int
    cell_means: tuple
    cell_cov_scale: float = 1.0
    task_given_property: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.feature_dim < 1:
            raise DistInfError("feature_dim must be positive")
        means = np.asarray(self.cell_means, dtype=np.float64)
        if means.shape != (2, 2, self.feature_dim):
            raise DistInfError(f"cell_means must have shape (2, 2, {self.feature_dim}), got {means.shape}")
        if not self.cell_cov_scale > 0:
            raise DistInfError("cell_cov_scale must be positive")
        q = tuple(float(v) for v in self.task_given_property)
        if len(q) != 2 or not all(0.0 <= v <= 1.0 for v in q):
            raise DistInfError("task_given_property must be two probabilities")
        object.__setattr__(self, "cell_means", tuple(tuple(tuple(float(v) for v in m) for m in row) for row in means))
        object.__setattr__(self, "task_given_property", q)

    @property
    def means(self) -> np.ndarray:
        return np.asarray(self.cell_means, dtype=np.float64)

    def implied_correlation(self, property_ratio: float) -> float:
        """phi between task label and property attribute at the given ratio."""
        a = property_ratio
        q0, q1 = self.task_given_property
        mu = a * q1 + (1 - a) * q0
        denom = a * (1 - a) * mu * (1 - mu)
        if denom <= 0:
            return 0.0
        return a * (1 - a) * (q1 - q0) / math.sqrt(denom)

    @classmethod
    def with_correlation(
        cls,
        phi: float,
        feature_dim: int = 6,
        task_shift: float = 1.0,
        property_shift: float = 1.0,
        interaction_shift: float = 0.0,
        cell_cov_scale: float = 1.0,
    ) -> "BaseDistributionSpec":
        """Build a spec whose phi at ratio 0.5 equals ``phi``.

        Feature 0 carries the task signal, feature 1 the property signal and
        feature 2 (if present) a task x property interaction; the remaining
        features are pure noise.
        """
        if not -1.0 <= phi <= 1.0:
            raise DistInfError("phi must lie in [-1, 1]")
        if feature_dim < 2:
            raise DistInfError("feature_dim must be at least 2")
        means = np.zeros((2, 2, feature_dim))
        for b in (0, 1):
            for t in (0, 1):
                means[b, t, 0] = task_shift * (t - 0.5)
                means[b, t, 1] = property_shift * (b - 0.5)
                if feature_dim > 2:
                    means[b, t, 2] = interaction_shift * (t - 0.5) * (2 * b - 1)
        # at ratio 0.5 with q = 0.5 -/+ d, phi = 2d
        d = phi / 2.0
        return cls(feature_dim, means, cell_cov_scale, (0.5 - d, 0.5 + d))


@dataclass(frozen=True)
class RatioTransformer:
    alpha: float
    size: int

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DistInfError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.size < 1:
            raise DistInfError("size must be at least 1")

    @property
    def n_ones(self) -> int:
        return round_half_up(self.alpha * self.size)


def synth_generate(spec: BaseDistributionSpec, n: int, property_ratio: float, seed: int) -> DatasetTable:
    if n < 1:
        raise DistInfError("n must be at least 1")
    if not 0.0 <= property_ratio <= 1.0:
        raise DistInfError(f"property_ratio must lie in [0, 1], got {property_ratio}")
    gen = np.random.default_rng(seed)
    prop = (gen.random(n) < property_ratio).astype(np.int64)
    q = np.asarray(spec.task_given_property)
    task = (gen.random(n) < q[prop]).astype(np.int64)
    noise = gen.standard_normal((n, spec.feature_dim))
    x = spec.means[prop, task] + math.sqrt(spec.cell_cov_scale) * noise
    return DatasetTable(x, task, prop, source_seed=seed)


def apply_ratio(data: DatasetTable, t: RatioTransformer, seed: int) -> DatasetTable:
    """Sample ``t.size`` rows without replacement so the result has ratio ``t.alpha``."""
    gen = np.random.default_rng(seed)
    ones = np.flatnonzero(data.property_attrs == 1)
    zeros = np.flatnonzero(data.property_attrs == 0)
    k1 = t.n_ones
    k0 = t.size - k1
    if k1 > ones.size or k0 > zeros.size:
        raise InsufficientData(
            f"need {k1} attribute-1 and {k0} attribute-0 rows, have {ones.size} and {zeros.size}"
        )
    picked = np.concatenate([gen.choice(ones, k1, replace=False), gen.choice(zeros, k0, replace=False)])
    picked = gen.permutation(picked)
    return data.take(picked).replace(source_seed=seed)


def _largest_remainder(quotas: np.ndarray, total: int) -> np.ndarray:
    base = np.floor(quotas).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:short]] += 1
    return base


def split_victim_adversary(
    data: DatasetTable, victim_fraction: float, seed: int
) -> tuple[DatasetTable, DatasetTable]:
    """Stratified, non-overlapping split into victim and adversary pools."""
    if not 0.0 < victim_fraction < 1.0:
        raise DistInfError(f"victim_fraction must lie in (0, 1), got {victim_fraction}")
    gen = np.random.default_rng(seed)
    n_victim = round_half_up(victim_fraction * data.n)
    if not 0 < n_victim < data.n:
        raise InsufficientData(f"split of {data.n} rows at {victim_fraction} leaves one side empty")
    strata = [
        np.flatnonzero((data.task_labels == t) & (data.property_attrs == b))
        for b in (0, 1)
        for t in (0, 1)
    ]
    sizes = np.array([s.size for s in strata], dtype=np.float64)
    take = _largest_remainder(sizes * victim_fraction, n_victim)
    victim, adversary = [], []
    for rows, k in zip(strata, take):
        rows = gen.permutation(rows)
        victim.append(rows[:k])
        adversary.append(rows[k:])
    v = np.sort(np.concatenate(victim))
    a = np.sort(np.concatenate(adversary))
    return data.take(v), data.take(a)


def _class_counts(data: DatasetTable) -> tuple[np.ndarray, np.ndarray]:
    return np.flatnonzero(data.property_attrs == 1), np.flatnonzero(data.property_attrs == 0)


def undersample(data: DatasetTable, target_alpha: float, seed: int) -> DatasetTable:
    """Drop rows of the over-represented attribute class until the ratio hits the target."""
    if not 0.0 <= target_alpha <= 1.0:
        raise DistInfError(f"target_alpha must lie in [0, 1], got {target_alpha}")
    gen = np.random.default_rng(seed)
    ones, zeros = _class_counts(data)
    n1, n0 = ones.size, zeros.size
    ratio = n1 / data.n
    if ratio > target_alpha:
        k = round_half_up(target_alpha * n0 / (1.0 - target_alpha))
        keep = np.concatenate([zeros, gen.choice(ones, k, replace=False)])
    elif ratio < target_alpha:
        k = round_half_up(n1 * (1.0 - target_alpha) / target_alpha)
        keep = np.concatenate([ones, gen.choice(zeros, k, replace=False)])
    else:
        return data
    if keep.size == 0:
        raise InsufficientData("under-sampling would remove every row")
    return data.take(np.sort(keep))


def _oversample_plan(data: DatasetTable, target_alpha: float, gen: np.random.Generator) -> np.ndarray | None:
    if not 0.0 <= target_alpha <= 1.0:
        raise DistInfError(f"target_alpha must lie in [0, 1], got {target_alpha}")
    ones, zeros = _class_counts(data)
    n1, n0 = ones.size, zeros.size
    ratio = n1 / data.n
    if ratio == target_alpha:
        return None
    if ratio < target_alpha:
        grow, other, frac = ones, n0, target_alpha
    else:
        grow, other, frac = zeros, n1, 1.0 - target_alpha
    if grow.size == 0:
        raise InsufficientData("cannot over-sample an attribute class with no rows")
    if frac >= 1.0:
        raise InsufficientData("target ratio is unreachable by adding rows")
    k = round_half_up(frac * other / (1.0 - frac))
    extra = max(k - grow.size, 0)
    return gen.choice(grow, extra, replace=True)


def oversample(data: DatasetTable, target_alpha: float, seed: int) -> DatasetTable:
    """Duplicate rows of the under-represented attribute class until the ratio hits the target."""
    gen = np.random.default_rng(seed)
    extra = _oversample_plan(data, target_alpha, gen)
    if extra is None:
        return data
    return data.take(np.concatenate([np.arange(data.n), extra]))


def augment_oversample(data: DatasetTable, target_alpha: float, noise_sigma: float, seed: int) -> DatasetTable:
    """Like :func:`oversample`, but synthetic rows get Gaussian feature jitter."""
    if noise_sigma < 0:
        raise DistInfError("noise_sigma must be non-negative")
    gen = np.random.default_rng(seed)
    extra = _oversample_plan(data, target_alpha, gen)
    if extra is None:
        return data
    synth = data.take(extra)
    jitter = noise_sigma * gen.standard_normal(synth.features.shape)
    synth = synth.replace(features=synth.features + jitter)
    return DatasetTable.concat([data, synth])


def poison_labels(data: DatasetTable, r: float, seed: int) -> DatasetTable:
    """Flip the task label on ``round(r * n)`` uniformly chosen rows."""
    if not 0.0 <= r <= 1.0:
        raise DistInfError(f"r must lie in [0, 1], got {r}")
    gen = np.random.default_rng(seed)
    k = round_half_up(r * data.n)
    idx = gen.choice(data.n, k, replace=False)
    labels = data.task_labels.copy()
    labels[idx] = 1 - labels[idx]
    return data.replace(task_labels=labels)


def measure_correlation(data: DatasetTable) -> float:
    """phi coefficient between task label and property attribute."""
    y, p = data.task_labels, data.property_attrs
    for name, col in (("task", y), ("property", p)):
        if col.min() == col.max():
            raise DegenerateColumn(f"{name} column is constant")
    n11 = int(np.sum((y == 1) & (p == 1)))
    n10 = int(np.sum((y == 0) & (p == 1)))
    n01 = int(np.sum((y == 1) & (p == 0)))
    n00 = int(np.sum((y == 0) & (p == 0)))
    num = n11 * n00 - n10 * n01
    den = math.sqrt((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00))
    return max(-1.0, min(1.0, num / den))


def _parse_binary(value: str, row: int, column: str) -> int:
    try:
        v = float(value)
    except ValueError:
        raise NonBinaryLabel(f"row {row}, column {column!r}: {value!r} is not 0/1") from None
    if v not in (0.0, 1.0):
        raise NonBinaryLabel(f"row {row}, column {column!r}: {value!r} is not 0/1")
    return int(v)


def standardize(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    out = np.zeros_like(x)
    ok = std > 0
    out[:, ok] = (x[:, ok] - mean[ok]) / std[ok]
    return out


def load_csv(path, task_column: str, property_column: str, standardize_features: bool = True) -> DatasetTable:
    """Read a headed CSV; every column other than task/property becomes a feature.

    Row numbers in errors are 1-based data rows (the header is row 0).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DistInfError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        for col in (task_column, property_column):
            if col not in header:
                raise MissingColumn(f"{path}: column {col!r} not in header {header}")
        ti, pi = header.index(task_column), header.index(property_column)
        feat_idx = [i for i in range(len(header)) if i not in (ti, pi)]
        feats, task, prop = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DistInfError(f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}")
            task.append(_parse_binary(row[ti], row_no, task_column))
            prop.append(_parse_binary(row[pi], row_no, property_column))
            vals = []
            for i in feat_idx:
                try:
                    vals.append(float(row[i]))
                except ValueError:
                    raise NonNumericFeature(
                        f"{path}: row {row_no}, column {header[i]!r}: {row[i]!r} is not numeric"
                    ) from None
            feats.append(vals)
    if not task:
        raise DistInfError(f"{path}: no data rows")
    x = np.asarray(feats, dtype=np.float64).reshape(len(task), len(feat_idx))
    if standardize_features:
        x = standardize(x)
    return DatasetTable(x, task, prop)


def save_csv(data: DatasetTable, path, task_column: str = "task", property_column: str = "property") -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(data.feature_dim)] + [task_column, property_column])
        for x, y, p in zip(data.features, data.task_labels, data.property_attrs):
            w.writerow([repr(float(v)) for v in x] + [int(y), int(p)])
