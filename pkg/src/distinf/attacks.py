"""Black-box distribution inference attacks.

Verdicts use bit 1 for "the victim was trained on G1" and bit 0 for G0.
Every attack sees the victim only through predictions (or accuracy, for the
threshold test), never through its weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .datagen import DatasetTable, round_half_up
from .errors import DimensionMismatch, DistInfError, EmptyBank, ShapeMismatch
from .models import ModelSpec, TrainedModel, accuracy, predict_labels, predict_proba, train

WEIGHTED = "weighted"
SIMPLE = "simple"
DEFAULT_FLOOR = 1e-6
DEFAULT_EPSILON = 0.01


@dataclass(frozen=True)
class ShadowBank:
    models_g0: tuple
    models_g1: tuple
    alpha0: float
    alpha1: float

    def __post_init__(self):
        object.__setattr__(self, "models_g0", tuple(self.models_g0))
        object.__setattr__(self, "models_g1", tuple(self.models_g1))
        if not self.models_g0 or not self.models_g1:
            raise EmptyBank("both shadow fleets must be non-empty")
        if self.alpha0 == self.alpha1:
            raise DistInfError("alpha0 and alpha1 must differ")

    def swapped(self) -> "ShadowBank":
        return ShadowBank(self.models_g1, self.models_g0, self.alpha1, self.alpha0)


@dataclass(frozen=True, eq=False)
class QueryBundle:
    features: np.ndarray
    source: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DistInfError("query features must be a non-empty matrix")
        object.__setattr__(self, "features", x)

    @classmethod
    def from_halves(cls, half0: np.ndarray, half1: np.ndarray, source: str = "") -> "QueryBundle":
        if len(half0) != len(half1):
            raise DistInfError("query halves must have equal size")
        return cls(np.concatenate([half0, half1]), source)


@dataclass(frozen=True)
class AttackVerdict:
    predicted_bit: int
    score: float
    attack_name: str


# KL divergence attack ---------------------------------------------------


def _clamp_rows(p: np.ndarray, floor: float) -> np.ndarray:
    p = np.clip(p, floor, 1.0 - floor)
    return p / p.sum(axis=-1, keepdims=True)


def _check_floor(floor: float) -> None:
    if not 0.0 < floor < 0.5:
        raise DistInfError(f"floor must lie in (0, 0.5), got {floor}")


def kl_divergence_estimate(n_preds: np.ndarray, m_preds: np.ndarray, floor: float = DEFAULT_FLOOR) -> float:
    """Mean over query rows of sum_c N_c * ln(N_c / M_c)."""
    _check_floor(floor)
    n_preds = np.asarray(n_preds, dtype=np.float64)
    m_preds = np.asarray(m_preds, dtype=np.float64)
    if n_preds.shape != m_preds.shape or n_preds.ndim != 2:
        raise ShapeMismatch(f"prediction shapes differ: {n_preds.shape} vs {m_preds.shape}")
    n = _clamp_rows(n_preds, floor)
    m = _clamp_rows(m_preds, floor)
    return float(np.mean(np.sum(n * (np.log(n) - np.log(m)), axis=1)))


def kl_to_targets(sources: np.ndarray, targets: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    """KL(source_s || target_v) for every pair; shapes (S, n, C) and (V, n, C) -> (S, V)."""
    _check_floor(floor)
    s = _clamp_rows(np.asarray(sources, dtype=np.float64), floor)
    t = _clamp_rows(np.asarray(targets, dtype=np.float64), floor)
    if s.shape[1:] != t.shape[1:]:
        raise ShapeMismatch(f"prediction shapes differ: {s.shape[1:]} vs {t.shape[1:]}")
    n_rows = s.shape[1]
    self_term = np.einsum("snc,snc->s", s, np.log(s))
    cross = np.einsum("snc,vnc->sv", s, np.log(t))
    return (self_term[:, None] - cross) / n_rows


def weighted_vote(victim: np.ndarray, shadow_g0: np.ndarray, shadow_g1: np.ndarray, floor: float = DEFAULT_FLOOR) -> float:
    """KL(g0 || victim) - KL(g1 || victim); positive means the victim looks like G1."""
    return kl_divergence_estimate(shadow_g0, victim, floor) - kl_divergence_estimate(shadow_g1, victim, floor)


def sample_pairs(n0: int, n1: int, pair_fraction: float, seed: int) -> np.ndarray:
    """Row-major indices (into the n0 x n1 pair grid) of the kept pairs, sorted."""
    if not 0.0 < pair_fraction <= 1.0:
        raise DistInfError(f"pair_fraction must lie in (0, 1], got {pair_fraction}")
    total = n0 * n1
    if pair_fraction == 1.0:
        return np.arange(total)
    k = max(1, round_half_up(pair_fraction * total))
    return np.sort(np.random.default_rng(seed).choice(total, k, replace=False))


def aggregate_votes(votes: np.ndarray, vote_mode: str = WEIGHTED, normalize: bool = True) -> tuple[int, float]:
    """Turn per-pair votes into ``(bit, score)``.

    Weighted votes are rescaled by their standard deviation before summing.
    They are not centred: centring would force the sum to zero and erase
    the decision.
    """
    votes = np.asarray(votes, dtype=np.float64)
    if vote_mode == WEIGHTED:
        if normalize:
            scale = votes.std()
            if scale > 0:
                votes = votes / scale
        score = float(votes.sum())
        return int(score > 0), score
    if vote_mode == SIMPLE:
        positive = int(np.sum(votes > 0))
        score = positive - votes.size / 2.0
        return int(score > 0), float(score)
    raise DistInfError(f"unknown vote mode {vote_mode!r}")


def kl_attack(
    victim_preds: np.ndarray,
    bank_preds_g0: Sequence[np.ndarray],
    bank_preds_g1: Sequence[np.ndarray],
    pair_fraction: float = 0.8,
    vote_mode: str = WEIGHTED,
    seed: int = 0,
    normalize: bool = True,
    flip: bool = False,
    floor: float = DEFAULT_FLOOR,
) -> AttackVerdict:
    if len(bank_preds_g0) == 0 or len(bank_preds_g1) == 0:
        raise EmptyBank("both shadow prediction lists must be non-empty")
    verdicts = kl_attack_many(
        np.asarray(victim_preds)[None],
        np.asarray(bank_preds_g0),
        np.asarray(bank_preds_g1),
        pair_fraction,
        vote_mode,
        seed,
        normalize,
        flip,
        floor,
    )
    return verdicts[0]


def kl_attack_many(
    victims: np.ndarray,
    g0: np.ndarray,
    g1: np.ndarray,
    pair_fraction: float = 0.8,
    vote_mode: str = WEIGHTED,
    seed: int = 0,
    normalize: bool = True,
    flip: bool = False,
    floor: float = DEFAULT_FLOOR,
) -> list[AttackVerdict]:
    """Vectorised :func:`kl_attack` over a stack of victims sharing one pair sample."""
    if len(g0) == 0 or len(g1) == 0:
        raise EmptyBank("both shadow prediction lists must be non-empty")
    if flip:
        kl0 = kl_to_targets(victims, g0, floor).T
        kl1 = kl_to_targets(victims, g1, floor).T
    else:
        kl0 = kl_to_targets(g0, victims, floor)
        kl1 = kl_to_targets(g1, victims, floor)
    kept = sample_pairs(len(g0), len(g1), pair_fraction, seed)
    i, j = np.divmod(kept, len(g1))
    out = []
    for v in range(victims.shape[0]):
        bit, score = aggregate_votes(kl0[i, v] - kl1[j, v], vote_mode, normalize)
        out.append(AttackVerdict(bit, score, "kl"))
    return out


# threshold test ---------------------------------------------------------


@dataclass(frozen=True)
class Threshold:
    value: float
    orientation: int  # +1: G1 lies above the threshold, -1: below
    agreement: float
    degenerate: bool = False

    def verdict(self, victim_accuracy: float) -> AttackVerdict:
        if self.degenerate:
            return AttackVerdict(0, 0.0, "threshold")
        margin = self.orientation * (victim_accuracy - self.value)
        return AttackVerdict(int(margin > 0), float(margin), "threshold")


def fit_threshold(acc_g0: Sequence[float], acc_g1: Sequence[float]) -> Threshold:
    """Linear search over midpoints of the sorted shadow accuracies."""
    a0 = np.asarray(acc_g0, dtype=np.float64)
    a1 = np.asarray(acc_g1, dtype=np.float64)
    if a0.size == 0 or a1.size == 0:
        raise EmptyBank("both shadow fleets must be non-empty")
    levels = np.unique(np.concatenate([a0, a1]))
    if levels.size < 2:
        return Threshold(float(levels[0]), 1, 0.5, degenerate=True)
    total = a0.size + a1.size
    best = None
    for cut in (levels[:-1] + levels[1:]) / 2.0:
        up = (np.sum(a1 > cut) + np.sum(a0 <= cut)) / total
        for orientation, agree in ((1, up), (-1, 1.0 - up)):
            if best is None or agree > best.agreement:
                best = Threshold(float(cut), orientation, float(agree))
    return best


def threshold_test(victim: TrainedModel, bank: ShadowBank, eval_data: DatasetTable) -> AttackVerdict:
    if eval_data.n < 1:
        raise DistInfError("eval_data must be non-empty")
    rule = fit_threshold(
        [accuracy(m, eval_data) for m in bank.models_g0],
        [accuracy(m, eval_data) for m in bank.models_g1],
    )
    return rule.verdict(accuracy(victim, eval_data))


# fixed-query meta-classifier (ZTO) --------------------------------------

DEFAULT_META_SPEC = ModelSpec.linear(epochs=200, learning_rate=0.1, batch_size=64, l2_penalty=1e-3)


def model_fingerprint(model: TrainedModel, query: QueryBundle) -> np.ndarray:
    return predict_proba(model, query.features).ravel()


@dataclass(frozen=True, eq=False)
class MetaClassifier:
    model: TrainedModel | None
    mean: np.ndarray
    scale: np.ndarray

    def verdict(self, fingerprint: np.ndarray) -> AttackVerdict:
        fingerprint = np.asarray(fingerprint, dtype=np.float64)
        if fingerprint.shape != self.mean.shape:
            raise DimensionMismatch(f"fingerprint has {fingerprint.size} entries, meta expects {self.mean.size}")
        if self.model is None:
            return AttackVerdict(0, 0.0, "zto")
        z = self._standardize(fingerprint[None])
        p1 = float(predict_proba(self.model, z)[0, 1])
        return AttackVerdict(int(predict_labels(self.model, z)[0]), p1 - 0.5, "zto")

    def _standardize(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        ok = self.scale > 0
        out[:, ok] = (x[:, ok] - self.mean[ok]) / self.scale[ok]
        return out


def fit_meta_classifier(fp_g0: np.ndarray, fp_g1: np.ndarray, meta_spec: ModelSpec = DEFAULT_META_SPEC) -> MetaClassifier:
    """Train the meta-classifier on shadow fingerprints (label 1 for G1).

    Rows are sorted canonically first, so the result does not depend on the
    order of the shadow lists.
    """
    fp_g0 = np.atleast_2d(np.asarray(fp_g0, dtype=np.float64))
    fp_g1 = np.atleast_2d(np.asarray(fp_g1, dtype=np.float64))
    if fp_g0.shape[0] == 0 or fp_g1.shape[0] == 0 or fp_g0.size == 0:
        raise EmptyBank("both shadow fleets must be non-empty")
    if fp_g0.shape[1] != fp_g1.shape[1]:
        raise DimensionMismatch("shadow fingerprints differ in length")
    x = np.concatenate([fp_g0, fp_g1])
    y = np.concatenate([np.zeros(len(fp_g0), np.int64), np.ones(len(fp_g1), np.int64)])
    order = np.lexsort(np.column_stack([y, x]).T[::-1])
    x, y = x[order], y[order]
    mean, scale = x.mean(axis=0), x.std(axis=0)
    meta = MetaClassifier(None, mean, scale)
    if not np.any(scale > 0):
        return meta
    z = meta._standardize(x)
    model = train(meta_spec, DatasetTable(z, y, np.zeros_like(y)))
    return MetaClassifier(model, mean, scale)


def zto_attack(
    victim: TrainedModel,
    bank: ShadowBank,
    query_points: QueryBundle,
    meta_spec: ModelSpec = DEFAULT_META_SPEC,
) -> AttackVerdict:
    meta = fit_meta_classifier(
        [model_fingerprint(m, query_points) for m in bank.models_g0],
        [model_fingerprint(m, query_points) for m in bank.models_g1],
        meta_spec,
    )
    return meta.verdict(model_fingerprint(victim, query_points))


# label-only access ------------------------------------------------------


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon < 0.5:
        raise DistInfError(f"epsilon must lie in (0, 0.5), got {epsilon}")


def confidence_rows(p1: np.ndarray, epsilon: float) -> np.ndarray:
    """Rows (1 - p, p) with both entries clamped into [eps, 1 - eps]."""
    p1 = np.asarray(p1, dtype=np.float64)
    rows = np.column_stack([np.clip(1.0 - p1, epsilon, 1.0 - epsilon), np.clip(p1, epsilon, 1.0 - epsilon)])
    return rows / rows.sum(axis=1, keepdims=True)


def label_only_transform(labels: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Label 1 -> (eps, 1 - eps), label 0 -> (1 - eps, eps)."""
    _check_epsilon(epsilon)
    labels = np.asarray(labels).reshape(-1)
    if not np.isin(labels, (0, 1)).all():
        raise DistInfError("labels must be 0/1")
    return confidence_rows(labels.astype(np.float64), epsilon)


def neighborhood_confidence(
    model: TrainedModel,
    features: np.ndarray,
    k: int,
    sigma: float,
    seed: int,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """Estimate confidences from the labels of ``k`` Gaussian-jittered copies of each row."""
    if k < 1 or sigma < 0:
        raise DistInfError("need k >= 1 and sigma >= 0")
    _check_epsilon(epsilon)
    x = np.asarray(features, dtype=np.float64)
    noise = np.random.default_rng(seed).standard_normal((k, *x.shape))
    noisy = (x[None] + sigma * noise).reshape(-1, x.shape[1])
    votes = predict_labels(model, noisy).reshape(k, x.shape[0])
    return confidence_rows(votes.mean(axis=0), epsilon)


# scoring ----------------------------------------------------------------


def distinguishing_accuracy(
    attack: Callable[[object], AttackVerdict | int],
    victims_g0: Sequence,
    victims_g1: Sequence,
) -> float:
    """Fraction of victims whose verdict matches the fleet they came from."""
    if len(victims_g0) == 0 or len(victims_g1) == 0:
        raise DistInfError("both victim fleets must be non-empty")

    def bit(v) -> int:
        out = attack(v)
        return int(out.predicted_bit if isinstance(out, AttackVerdict) else out)

    correct = sum(bit(v) == 0 for v in victims_g0) + sum(bit(v) == 1 for v in victims_g1)
    return correct / (len(victims_g0) + len(victims_g1))


def verdict_accuracy(bits_g0: Sequence[int], bits_g1: Sequence[int]) -> float:
    n = len(bits_g0) + len(bits_g1)
    return (sum(b == 0 for b in bits_g0) + sum(b == 1 for b in bits_g1)) / n
