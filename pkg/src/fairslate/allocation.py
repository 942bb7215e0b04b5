"""Interval-level exposure allocation via the Talmud bankruptcy rule.

Each provider p carries an exposure floor m_p for the whole session.  At the
start of interval n the still-unmet remainder (the estate) is divided over
the remaining intervals, which act as claimants whose claims are the
forecast exposure capacity of each interval.  The Talmud rule splits the
estate with constrained-equal awards of half-claims below the halfway point
and constrained-equal losses above it, which keeps allocations monotone in
the estate and self-dual.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .domain import ArrivalSchedule, ProviderCatalog, ValidationError, position_weights

__all__ = [
    "TrafficStats",
    "FairnessSpec",
    "AllocationPlan",
    "forecast_traffic",
    "build_demand",
    "update_estate",
    "talmud_allocate",
    "plan_interval",
    "write_plan_csv",
]

_THETA_ITERS = 200
_THETA_TOL = 1e-12


@dataclass
class TrafficStats:
    """Observed per-interval arrival counts plus the latest forecast."""

    history: list[float] = field(default_factory=list)
    forecast: list[float] = field(default_factory=list)

    def record(self, r: float) -> None:
        if r < 0:
            raise ValueError("traffic must be non-negative")
        self.history.append(float(r))


@dataclass(frozen=True)
class FairnessSpec:
    """Session-level exposure floors m_p."""

    min_total: dict[str, float]
    beta_min: float
    horizon: int

    @classmethod
    def merit_proportional(
        cls,
        catalog: ProviderCatalog,
        total_arrivals: int,
        K: int,
        beta_min: float,
        horizon: int,
    ) -> "FairnessSpec":
        """m_p = beta * merit share * total decayed exposure delivered.

        Every served slate delivers sum_k p(k) exposure units, so the session
        budget is total_arrivals * sum_k p(k).
        """
        if not (0.0 <= beta_min <= 1.0):
            raise ValidationError("beta_min must lie in [0, 1]")
        budget = float(total_arrivals) * float(position_weights(K).sum())
        shares = catalog.merit_shares()
        floors = {
            p: beta_min * float(shares[j]) * budget
            for j, p in enumerate(catalog.providers)
        }
        return cls(min_total=floors, beta_min=beta_min, horizon=horizon)


@dataclass(frozen=True)
class AllocationPlan:
    """Talmud split of each provider's estate over intervals n..N.

    ``current_target`` is the column for interval n itself; ``theta`` the
    per-provider dual level the bisection settled on.
    """

    interval: int
    estate: dict[str, float]
    demand: dict[tuple[str, int], float]
    allocation: dict[tuple[str, int], float]
    current_target: dict[str, float]
    theta: dict[str, float]


def forecast_traffic(
    stats: TrafficStats,
    method: str,
    upcoming: int,
    prior: float = 0.0,
    period: int = 4,
) -> list[float]:
    """Per-interval traffic forecasts for the next ``upcoming`` intervals.

    mean      - arithmetic mean of all history
    last      - most recent observation, held flat
    seasonal  - mean over history at the same phase modulo ``period``

    With no history every method returns the prior.  The forecast is also
    stored on ``stats``.
    """
    if method not in ("mean", "seasonal", "last"):
        raise ValueError(f"unknown forecast method {method!r}")
    if upcoming < 0:
        raise ValueError("upcoming must be >= 0")
    if prior < 0:
        raise ValueError("prior must be >= 0")
    hist = stats.history
    if not hist:
        out = [float(prior)] * upcoming
    elif method == "mean":
        out = [float(np.mean(hist))] * upcoming
    elif method == "last":
        out = [float(hist[-1])] * upcoming
    else:
        if period < 1:
            raise ValueError("period must be >= 1")
        overall = float(np.mean(hist))
        by_phase: dict[int, list[float]] = {}
        for i, r in enumerate(hist):
            by_phase.setdefault(i % period, []).append(r)
        out = []
        start = len(hist)  # 0-based index of the first upcoming interval
        for j in range(upcoming):
            phase = (start + j) % period
            vals = by_phase.get(phase)
            out.append(float(np.mean(vals)) if vals else overall)
    stats.forecast = list(out)
    return out


def build_demand(
    forecast: Sequence[float],
    K: int,
    alpha_demand: float,
    catalog: ProviderCatalog,
    weighting: str = "merit",
    start_interval: int = 1,
) -> dict[tuple[str, int], float]:
    """Claims D_{p,i} of each future interval i on each provider's estate.

    uniform:  D = alpha * K * r_hat(i) for every provider
    merit:    the same total scaled by the provider's merit share
    """
    if weighting not in ("uniform", "merit"):
        raise ValueError(f"unknown demand weighting {weighting!r}")
    if not (alpha_demand > 0.0):
        raise ValueError("alpha_demand must be > 0")
    if K < 1:
        raise ValueError("K must be >= 1")
    shares = catalog.merit_shares()
    out: dict[tuple[str, int], float] = {}
    for offset, r_hat in enumerate(forecast):
        if r_hat < 0:
            raise ValueError("forecast traffic must be non-negative")
        base = alpha_demand * K * float(r_hat)
        n = start_interval + offset
        for j, p in enumerate(catalog.providers):
            out[(p, n)] = base * float(shares[j]) if weighting == "merit" else base
    return out


def update_estate(prev_estate: float, earned: float) -> float:
    """Remaining floor after an interval: max(0, m_hat - E)."""
    if prev_estate < 0.0:
        raise ValueError("estate must be non-negative")
    if earned < 0.0:
        raise ValueError("earned exposure must be non-negative")
    return max(0.0, prev_estate - earned)


def _talmud_theta(estate: float, claims: Sequence[float]) -> tuple[list[float], float]:
    total = math.fsum(claims)
    half = 0.5 * total
    lo, hi = 0.0, max(claims) if claims else 0.0

    if estate <= half:
        def alloc(theta: float) -> list[float]:
            return [min(0.5 * d, theta) for d in claims]
        increasing = True
    else:
        def alloc(theta: float) -> list[float]:
            return [max(0.5 * d, d - theta) for d in claims]
        increasing = False

    theta = 0.5 * (lo + hi)
    a = alloc(theta)
    for _ in range(_THETA_ITERS):
        resid = math.fsum(a) - estate
        if abs(resid) <= _THETA_TOL:
            break
        if (resid < 0.0) == increasing:
            lo = theta
        else:
            hi = theta
        theta = 0.5 * (lo + hi)
        a = alloc(theta)
    return a, theta


def talmud_allocate(estate: float, claims: Sequence[float]) -> list[float]:
    """Talmud division of ``estate`` among claimants with the given claims.

    Below half the claim mass each claimant gets min(D_i/2, theta); above it
    max(D_i/2, D_i - theta), with theta chosen by bisection so the awards sum
    to the estate.  An estate exceeding total claims is truncated to the
    claims with a warning; the surplus is discarded.
    """
    claims = [float(d) for d in claims]
    if estate < 0.0:
        raise ValueError("estate must be non-negative")
    if any(d < 0.0 for d in claims):
        raise ValueError("claims must be non-negative")
    if not claims:
        return []
    total = math.fsum(claims)
    if estate > total:
        warnings.warn(
            f"estate {estate} exceeds total claims {total}; allocating claims only",
            stacklevel=2,
        )
        return list(claims)
    if estate == 0.0:
        return [0.0] * len(claims)
    a, _ = _talmud_theta(estate, claims)
    return a


def plan_interval(
    n: int,
    estates: Mapping[str, float],
    demands: Mapping[tuple[str, int], float],
) -> AllocationPlan:
    """Splits each provider's estate over intervals n..N via the Talmud rule.

    ``demands`` must cover a contiguous interval range starting at n, the
    same range for every provider.
    """
    if n < 1:
        raise ValueError("interval must be >= 1")
    intervals = sorted({i for (_, i) in demands})
    if not intervals:
        raise ValueError("no demands given")
    horizon = intervals[-1]
    expected = list(range(n, horizon + 1))
    if intervals != expected:
        raise ValueError(f"demands must cover intervals {n}..{horizon}, got {intervals}")
    allocation: dict[tuple[str, int], float] = {}
    current: dict[str, float] = {}
    thetas: dict[str, float] = {}
    for p, estate in estates.items():
        claims = []
        for i in expected:
            if (p, i) not in demands:
                raise ValueError(f"missing demand for ({p!r}, {i})")
            claims.append(float(demands[(p, i)]))
        if estate < 0.0:
            raise ValueError("estate must be non-negative")
        total = math.fsum(claims)
        if estate > total:
            warnings.warn(
                f"estate {estate} of provider {p!r} exceeds its total demand {total}",
                stacklevel=2,
            )
            awards, theta = list(claims), 0.0
        elif estate == 0.0:
            awards, theta = [0.0] * len(claims), 0.0
        else:
            awards, theta = _talmud_theta(estate, claims)
        for i, a in zip(expected, awards):
            allocation[(p, i)] = a
        current[p] = allocation[(p, n)]
        thetas[p] = theta
    return AllocationPlan(
        interval=n,
        estate={p: float(v) for p, v in estates.items()},
        demand={k: float(v) for k, v in demands.items()},
        allocation=allocation,
        current_target=current,
        theta=thetas,
    )


def write_plan_csv(plan: AllocationPlan, path: str | Path) -> None:
    """provider_id,interval,demand,allocation,estate_before rows."""
    intervals = sorted({i for (_, i) in plan.allocation})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["provider_id", "interval", "demand", "allocation", "estate_before"])
        for p in plan.estate:
            for i in intervals:
                w.writerow([
                    p,
                    i,
                    repr(float(plan.demand[(p, i)])),
                    repr(float(plan.allocation[(p, i)])),
                    repr(float(plan.estate[p])),
                ])
