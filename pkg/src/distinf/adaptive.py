"""Membership-inference-assisted adversary against the under-sampling defense.

The adversary knows ``m`` training records of each attribute value.  The
victim under-samples its majority attribute to balance the data, pruning
uniformly, so the fraction of known records that survive reveals the
original ratio.  A membership oracle flags surviving records with rate
``beta``; the ratio estimate is ``m_minus / (m_minus + m_plus)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import seeding
from .errors import DistInfError, ZeroDenominator
from .metrics import nleaked_regression

EXPECTATION = "expectation"
BINOMIAL = "binomial"
G0, G1 = 0, 1


@dataclass(frozen=True)
class MembershipOracleSpec:
    """``beta`` multiplies the surviving member count (it acts as a detection
    rate even though it is usually called a false negative rate); ``fpr`` is
    the rate at which pruned known records are still flagged as members."""

    beta: float = 1.0
    fpr: float = 0.0
    seed: int = 0
    mode: str = EXPECTATION

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise DistInfError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 <= self.fpr < 1.0:
            raise DistInfError(f"fpr must lie in [0, 1), got {self.fpr}")
        if self.mode not in (EXPECTATION, BINOMIAL):
            raise DistInfError(f"unknown oracle mode {self.mode!r}")


@dataclass(frozen=True)
class AttributeSurvival:
    retained_minus: float
    retained_plus: float
    survived_minus: float
    survived_plus: float
    m_minus: float
    m_plus: float


@dataclass(frozen=True)
class AdaptiveEstimate:
    m_minus: float
    m_plus: float
    alpha_hat: float


def retention_rates(alpha: float) -> tuple[float, float]:
    """Fraction of attribute-0 and attribute-1 rows kept when balancing."""
    if not 0.0 < alpha < 1.0:
        raise DistInfError(f"alpha must lie in (0, 1), got {alpha}")
    if alpha > 0.5:
        return 1.0, (1.0 - alpha) / alpha
    if alpha < 0.5:
        return alpha / (1.0 - alpha), 1.0
    return 1.0, 1.0


def simulate_survival(m: int, alpha: float, oracle: MembershipOracleSpec, trial: int = 0) -> AttributeSurvival:
    if m < 1:
        raise DistInfError("m must be at least 1")
    r0, r1 = retention_rates(alpha)
    b, f = oracle.beta, oracle.fpr
    if oracle.mode == EXPECTATION:
        s0, s1 = m * r0, m * r1
        return AttributeSurvival(r0, r1, s0, s1, b * s0 + f * (m - s0), b * s1 + f * (m - s1))
    gen = seeding.rng(oracle.seed, "survival", seeding.alpha_key(alpha), m, trial)
    s0 = int(gen.binomial(m, r0))
    s1 = int(gen.binomial(m, r1))
    d0 = int(gen.binomial(s0, b)) + int(gen.binomial(m - s0, f))
    d1 = int(gen.binomial(s1, b)) + int(gen.binomial(m - s1, f))
    return AttributeSurvival(r0, r1, s0, s1, d0, d1)


def estimate_alpha(m_minus: float, m_plus: float) -> float:
    total = m_minus + m_plus
    if not total > 0:
        raise ZeroDenominator("no known record was flagged as a member")
    return m_minus / total


def binary_decision(alpha_hat: float, tau: float = 0.03, alpha0: float = 0.5) -> int:
    """G1 iff the estimate differs from ``alpha0`` by strictly more than ``tau``."""
    # rounding guards against 0.53 - 0.5 == 0.030000000000000027
    return G1 if round(abs(alpha_hat - alpha0), 12) > tau else G0


@dataclass(frozen=True)
class CampaignRecord:
    alpha: float
    m: int
    beta: float
    mode: str
    trial: int
    alpha_hat: float
    decision: int


@dataclass(frozen=True)
class CampaignResult:
    mse: float
    nleaked_reg: float
    binary_accuracy: float
    records: tuple

    CSV_COLUMNS = ("alpha", "m", "beta", "mode", "trial", "alpha_hat", "decision")

    def csv_rows(self):
        for r in self.records:
            yield [repr(r.alpha), r.m, repr(r.beta), r.mode, r.trial, repr(r.alpha_hat), "G1" if r.decision else "G0"]


def adaptive_campaign(
    victim_alphas: Sequence[float],
    m: int,
    oracle: MembershipOracleSpec,
    trials: int,
    tau: float = 0.03,
    alpha0: float = 0.5,
) -> CampaignResult:
    """Monte-Carlo (or exact, in expectation mode) campaign over victim ratios.

    A flagged count of zero on both sides leaves the adversary uninformed;
    it then guesses ``alpha0``.  ``nleaked_reg`` is the mean over ratios of
    the per-ratio regression n_leaked, and is ``inf`` when an MSE is zero.
    """
    if trials < 1:
        raise DistInfError("trials must be at least 1")
    if len(victim_alphas) == 0:
        raise DistInfError("need at least one victim ratio")
    records = []
    sq_err = []
    per_alpha = []
    correct = 0
    for alpha in victim_alphas:
        errs = []
        for trial in range(trials):
            s = simulate_survival(m, alpha, oracle, trial)
            try:
                a_hat = estimate_alpha(s.m_minus, s.m_plus)
            except ZeroDenominator:
                a_hat = alpha0
            decision = binary_decision(a_hat, tau, alpha0)
            correct += decision == (G1 if alpha != alpha0 else G0)
            errs.append((a_hat - alpha) ** 2)
            records.append(CampaignRecord(alpha, m, oracle.beta, oracle.mode, trial, a_hat, decision))
        sq_err.extend(errs)
        mse_a = math.fsum(errs) / len(errs)
        per_alpha.append(math.inf if mse_a <= 0 else nleaked_regression(mse_a, alpha))
    mse = math.fsum(sq_err) / len(sq_err)
    return CampaignResult(
        mse=mse,
        nleaked_reg=float(np.mean(per_alpha)),
        binary_accuracy=correct / len(records),
        records=tuple(records),
    )
