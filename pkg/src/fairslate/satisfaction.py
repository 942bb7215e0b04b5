"""Regret-weighted user satisfaction and its fuzzy-membership normalization.

The perceived value of a slate of quality q against the best achievable
quality q* combines the raw utility with a regret term

    Z(q) = q**alpha + (1 - exp(-delta * (q - q*)))

which is concave and increasing in q for alpha <= 1.  Normalizing Z between
its value at q = 0 and at q = q* yields a [0, 1] membership score Z' whose
curvature is controlled by delta: as delta -> 0, Z' -> q / q*; large delta
makes deep quality losses disproportionately expensive.

Provider-side unfairness G (a variance of merit-normalized exposure) maps to
a membership through a falling sigmoid centered at half the unacceptable
level g0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RegretParams",
    "FuzzyParams",
    "utility",
    "regret_rejoice",
    "perceived_satisfaction",
    "normalized_satisfaction",
    "fairness_membership",
    "satisfaction_batch",
    "satisfaction_slope",
]

# exp() overflows float64 just above exp(709); clamp arguments well inside.
_EXP_CLAMP = 700.0


def _exp(x: float) -> float:
    return math.exp(min(max(x, -_EXP_CLAMP), _EXP_CLAMP))


@dataclass(frozen=True)
class RegretParams:
    """delta > 0 steers regret steepness; alpha_risk in (0, 1] the utility power."""

    delta: float
    alpha_risk: float = 1.0

    def __post_init__(self):
        if not (self.delta > 0.0):
            raise ValueError("delta must be > 0")
        if not (0.0 < self.alpha_risk <= 1.0):
            raise ValueError("alpha_risk must lie in (0, 1]")


@dataclass(frozen=True)
class FuzzyParams:
    """Trade-off weight and the shape of the unfairness membership."""

    lam: float
    k_steep: float
    g0: float

    def __post_init__(self):
        if not (0.0 <= self.lam <= 1.0):
            raise ValueError("lambda must lie in [0, 1]")
        if not (self.k_steep > 0.0):
            raise ValueError("k_steep must be > 0")
        if not (self.g0 > 0.0):
            raise ValueError("g0 must be > 0")


def utility(q: float, params: RegretParams) -> float:
    """Raw slate utility V(q) = q ** alpha_risk."""
    if q < 0.0:
        raise ValueError("quality must be non-negative")
    return float(q) ** params.alpha_risk


def regret_rejoice(q: float, q_star: float, delta: float) -> float:
    """R = 1 - exp(-delta * (q - q*)); <= 0 whenever q <= q*, zero at q = q*."""
    if not (delta > 0.0):
        raise ValueError("delta must be > 0")
    if q < 0.0 or q_star < 0.0:
        raise ValueError("qualities must be non-negative")
    if q > q_star:
        raise ValueError(f"q={q} exceeds the ideal q*={q_star}")
    return 1.0 - _exp(-delta * (q - q_star))


def perceived_satisfaction(q: float, q_star: float, delta: float) -> float:
    """Z(q) = q + R(q); utility power fixed at 1."""
    return float(q) + regret_rejoice(q, q_star, delta)


def normalized_satisfaction(q: float, q_star: float, delta: float) -> float:
    """Membership Z'(q) = (Z(q) - Z(0)) / (Z(q*) - Z(0)) in [0, 1].

    The zero anchor is Z(0) = 1 - exp(delta * q*) and the top anchor
    Z(q*) = q*.  A degenerate q* = 0 means nothing can be lost: Z' = 1.
    """
    if q_star == 0.0:
        if q != 0.0:
            raise ValueError(f"q={q} exceeds the ideal q*=0")
        return 1.0
    z = perceived_satisfaction(q, q_star, delta)
    z0 = 1.0 - _exp(delta * q_star)
    return (z - z0) / (q_star - z0)


def fairness_membership(g: float, params: FuzzyParams) -> float:
    """Falling sigmoid 1 - 1/(1 + exp(-k*(G - g0/2))), in (0, 1).

    Equal to 1/2 exactly at G = g0/2; approaches 1 as unfairness vanishes
    and 0 as it passes the unacceptable level g0.
    """
    if g < 0.0:
        raise ValueError("unfairness level must be non-negative")
    x = params.k_steep * (g - 0.5 * params.g0)
    return 1.0 - 1.0 / (1.0 + _exp(-x))


# ---------------------------------------------------------------------------
# Vector helpers used by the slate solver.
# ---------------------------------------------------------------------------

def satisfaction_batch(q: np.ndarray, q_star: float, delta: float) -> np.ndarray:
    """Z' over an array of qualities, fp noise clamped into [0, q*]."""
    if q_star <= 0.0:
        return np.ones_like(q)
    qc = np.clip(q, 0.0, q_star)
    z = qc + 1.0 - np.exp(np.clip(-delta * (qc - q_star), -_EXP_CLAMP, _EXP_CLAMP))
    z0 = 1.0 - _exp(delta * q_star)
    return (z - z0) / (q_star - z0)


def satisfaction_slope(q: float, q_star: float, delta: float) -> float:
    """dZ'/dq at q; positive, decreasing in q (Z' is concave)."""
    if q_star <= 0.0:
        return 0.0
    qc = min(max(q, 0.0), q_star)
    z0 = 1.0 - _exp(delta * q_star)
    return (1.0 + delta * _exp(-delta * (qc - q_star))) / (q_star - z0)
