"""Statistical tests and drift detectors behind the acceptance gate.

Public surface over the numerical kernels: one-sided Welch t-test,
Shapiro-Wilk normality check, one-sided Mann-Whitney U, test selection,
and EWMA/CUSUM drift monitors on the rating stream.

All functions are pure and deterministic; samples are sequences of Likert
ratings in {1..5}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

from ..errors import ConstantSample, InvalidRating, SampleTooSmall
from .backend import BACKEND_NAME, kernels

WELCH = "welch"
MANN_WHITNEY = "mann_whitney"

EXACT_LIMIT: int = kernels.EXACT_LIMIT


def validate_sample(values: Sequence[int], *, min_n: int = 1) -> list:
    if len(values) < min_n:
        raise SampleTooSmall(f"need at least {min_n} ratings, got {len(values)}")
    out = []
    for v in values:
        if v not in (1, 2, 3, 4, 5):
            raise InvalidRating(f"rating {v!r} outside 1..5")
        out.append(float(v))
    return out


def _is_constant(values: Sequence[float]) -> bool:
    first = values[0]
    return all(v == first for v in values)


@dataclass(frozen=True)
class TestResult:
    test: str  # WELCH or MANN_WHITNEY
    statistic: float
    p_value: float
    degrees_of_freedom: Optional[float] = None
    exact: Optional[bool] = None  # Mann-Whitney only

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise AssertionError(f"p-value {self.p_value} outside [0, 1]")


def welch_one_sided(prev: Sequence[int], new: Sequence[int]) -> TestResult:
    """One-sided Welch t-test for H1: mean(new) > mean(prev).

    Requires n >= 2 on both sides.  When both windows are constant the
    degenerate rule applies: p = 0 on strict improvement, else p = 1.
    """
    p_vals = validate_sample(prev, min_n=2)
    n_vals = validate_sample(new, min_n=2)
    t, df, p = kernels.welch_t(p_vals, n_vals)
    return TestResult(test=WELCH, statistic=t, p_value=p, degrees_of_freedom=df)


def shapiro_wilk(sample: Sequence[int]) -> tuple:
    """Royston approximation of the Shapiro-Wilk test; returns (W, p).

    Raises ConstantSample on zero variance (callers treat that as a
    normality failure) and SampleTooSmall outside 3 <= n <= 5000.
    """
    vals = validate_sample(sample, min_n=3)
    if len(vals) > 5000:
        raise SampleTooSmall(f"Shapiro-Wilk supports at most 5000 values, got {len(vals)}")
    if _is_constant(vals):
        raise ConstantSample("zero-variance sample")
    return kernels.shapiro_wilk(vals)


def mann_whitney_one_sided(prev: Sequence[int], new: Sequence[int]) -> TestResult:
    """One-sided Mann-Whitney U for H1: new stochastically greater than prev.

    Exact tail by enumeration when len(prev) + len(new) <= EXACT_LIMIT,
    otherwise the normal approximation with midrank tie correction and
    continuity correction.
    """
    p_vals = validate_sample(prev, min_n=1)
    n_vals = validate_sample(new, min_n=1)
    u, p, used_exact = kernels.mann_whitney(p_vals, n_vals)
    return TestResult(test=MANN_WHITNEY, statistic=u, p_value=p, exact=used_exact)


def select_test(prev: Sequence[int], new: Sequence[int], alpha_normality: float = 0.05) -> str:
    """Welch by default; Mann-Whitney when Shapiro-Wilk rejects normality.

    A constant window counts as a normality failure unless both windows are
    constant, in which case Welch's degenerate rule handles the decision.
    Windows shorter than 3 cannot be tested for normality and default to
    Welch.
    """
    p_vals = validate_sample(prev, min_n=1)
    n_vals = validate_sample(new, min_n=1)
    const_prev = _is_constant(p_vals)
    const_new = _is_constant(n_vals)
    if const_prev and const_new:
        return WELCH
    if const_prev or const_new:
        return MANN_WHITNEY
    if len(p_vals) < 3 or len(n_vals) < 3:
        return WELCH
    _, p1 = kernels.shapiro_wilk(p_vals)
    _, p2 = kernels.shapiro_wilk(n_vals)
    return WELCH if (p1 > alpha_normality and p2 > alpha_normality) else MANN_WHITNEY


def run_gate_test(prev: Sequence[int], new: Sequence[int], alpha_normality: float = 0.05) -> TestResult:
    """Test selection plus execution, as used by the gate."""
    chosen = select_test(prev, new, alpha_normality)
    if chosen == WELCH:
        return welch_one_sided(prev, new)
    return mann_whitney_one_sided(prev, new)


# ---------------------------------------------------------------------------
# Drift monitors (advisory signals; they never gate by themselves)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftParams:
    """EWMA/CUSUM parameters, calibrated from the first full rating window."""

    lam: float = 0.2
    L: float = 3.0
    k: float = 0.25
    h: float = 2.0
    mu0: float = 3.0
    sigma0: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise InvalidRating(f"lambda must be in (0, 1], got {self.lam}")

    @staticmethod
    def calibrate(ratings: Sequence[int], *, lam: float = 0.2, L: float = 3.0,
                  k_factor: float = 0.5, h_factor: float = 4.0,
                  sigma_floor: float = 0.25) -> "DriftParams":
        """Defaults k = 0.5*sigma0 and h = 4*sigma0; sigma floored to avoid
        hair-trigger alarms after a constant warm-up window."""
        vals = validate_sample(ratings, min_n=1)
        mu0 = sum(vals) / len(vals)
        if len(vals) > 1:
            var = sum((v - mu0) ** 2 for v in vals) / (len(vals) - 1)
        else:
            var = 0.0
        sigma0 = max(math.sqrt(var), sigma_floor)
        return DriftParams(lam=lam, L=L, k=k_factor * sigma0, h=h_factor * sigma0,
                           mu0=mu0, sigma0=sigma0)

    @property
    def ewma_lower_limit(self) -> float:
        return self.mu0 - self.L * self.sigma0 * math.sqrt(self.lam / (2.0 - self.lam))


@dataclass(frozen=True)
class DriftMonitorState:
    params: DriftParams
    ewma_value: float
    cusum_pos: float = 0.0
    cusum_neg: float = 0.0
    alarm: bool = False

    @staticmethod
    def initial(params: DriftParams) -> "DriftMonitorState":
        return DriftMonitorState(params=params, ewma_value=params.mu0)


def ewma_update(state: DriftMonitorState, r: int) -> DriftMonitorState:
    """EWMA step; alarm when the smoothed rating falls below the lower control limit."""
    validate_sample([r])
    p = state.params
    ewma = p.lam * r + (1.0 - p.lam) * state.ewma_value
    return replace(state, ewma_value=ewma, alarm=ewma < p.ewma_lower_limit)


def cusum_update(state: DriftMonitorState, r: int) -> DriftMonitorState:
    """One-sided lower CUSUM step; the upper accumulator is kept but never alarms."""
    validate_sample([r])
    p = state.params
    neg = max(0.0, state.cusum_neg + (p.mu0 - p.k) - r)
    pos = max(0.0, state.cusum_pos + r - (p.mu0 + p.k))
    return replace(state, cusum_neg=neg, cusum_pos=pos, alarm=neg > p.h)


__all__ = [
    "BACKEND_NAME",
    "EXACT_LIMIT",
    "MANN_WHITNEY",
    "WELCH",
    "DriftMonitorState",
    "DriftParams",
    "TestResult",
    "cusum_update",
    "ewma_update",
    "mann_whitney_one_sided",
    "run_gate_test",
    "select_test",
    "shapiro_wilk",
    "validate_sample",
    "welch_one_sided",
]
