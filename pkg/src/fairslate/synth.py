"""Synthetic dataset generation for benchmarking the re-ranker.

Provider catalog sizes follow a Zipf profile, relevance scores follow either
a uniform or a skewed Beta(2, 5) base with per-provider quality offsets, and
arrivals follow a constant, sinusoidal, or bursty interval profile.  Every
draw is a named substream of the spec seed, so generated datasets are
byte-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import (
    ArrivalSchedule,
    Dataset,
    PreferenceStore,
    ProviderCatalog,
    ValidationError,
    write_arrivals,
    write_catalog,
    write_scores,
)
from .seeding import substream

__all__ = ["SyntheticSpec", "generate_dataset", "write_dataset"]

SCORE_DISTRIBUTIONS = ("uniform", "beta-skewed")
TRAFFIC_PATTERNS = ("constant", "sinusoidal", "bursty")


@dataclass(frozen=True)
class SyntheticSpec:
    users: int
    items: int
    providers: int
    score_distribution: str = "beta-skewed"
    provider_size_skew: float = 1.0  # Zipf exponent; 0 means equal sizes
    traffic_pattern: str = "sinusoidal"
    seed: int = 0

    def __post_init__(self):
        if self.users < 1 or self.items < 1 or self.providers < 1:
            raise ValidationError("users, items and providers must be >= 1")
        if self.providers > self.items:
            raise ValidationError("cannot have more providers than items")
        if self.score_distribution not in SCORE_DISTRIBUTIONS:
            raise ValidationError(
                f"score_distribution must be one of {SCORE_DISTRIBUTIONS}"
            )
        if self.provider_size_skew < 0.0:
            raise ValidationError("provider_size_skew must be >= 0")
        if self.traffic_pattern not in TRAFFIC_PATTERNS:
            raise ValidationError(f"traffic_pattern must be one of {TRAFFIC_PATTERNS}")


def _largest_remainder(weights: np.ndarray, total: int, minimum: int = 0) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``."""
    if minimum * weights.shape[0] > total:
        raise ValidationError("total too small for the per-bucket minimum")
    spend = total - minimum * weights.shape[0]
    quota = weights / weights.sum() * spend
    base = np.floor(quota).astype(np.int64)
    rest = spend - int(base.sum())
    # ties on the fractional part resolve toward the earlier bucket
    frac_order = np.lexsort((np.arange(weights.shape[0]), -(quota - base)))
    base[frac_order[:rest]] += 1
    return base + minimum


def _provider_sizes(spec: SyntheticSpec) -> np.ndarray:
    ranks = np.arange(1, spec.providers + 1, dtype=np.float64)
    weights = ranks ** (-spec.provider_size_skew)
    return _largest_remainder(weights, spec.items, minimum=1)


def _traffic_weights(pattern: str, N: int) -> np.ndarray:
    if pattern == "constant":
        return np.ones(N)
    if pattern == "sinusoidal":
        n = np.arange(N, dtype=np.float64)
        return 1.0 + 0.8 * np.sin(2.0 * math.pi * n / N)
    # bursty: a flat floor with one heavy mid-session spike
    w = np.ones(N)
    w[N // 2] = max(N, 2)
    return w


def generate_dataset(spec: SyntheticSpec, intervals: int) -> Dataset:
    """Materializes the spec as in-memory domain objects."""
    if intervals < 1:
        raise ValidationError("intervals must be >= 1")
    sizes = _provider_sizes(spec)
    users = [f"u{j:05d}" for j in range(1, spec.users + 1)]
    items = [f"i{j:05d}" for j in range(1, spec.items + 1)]
    providers = [f"p{j:03d}" for j in range(1, spec.providers + 1)]
    owner: dict[str, str] = {}
    pos = 0
    owner_idx = np.empty(spec.items, dtype=np.int64)
    for j, size in enumerate(sizes):
        for _ in range(size):
            owner[items[pos]] = providers[j]
            owner_idx[pos] = j
            pos += 1
    catalog = ProviderCatalog(owner)

    rng = substream(spec.seed, "scores")
    if spec.score_distribution == "uniform":
        base = rng.uniform(0.0, 1.0, size=(spec.users, spec.items))
        matrix = base
    else:
        base = rng.beta(2.0, 5.0, size=(spec.users, spec.items))
        offsets = substream(spec.seed, "provider-quality").normal(
            0.0, 0.2, size=spec.providers
        )
        matrix = np.clip(base + offsets[owner_idx][None, :], 0.0, 1.0)
    store = PreferenceStore(users, items, matrix)

    counts = _largest_remainder(
        _traffic_weights(spec.traffic_pattern, intervals), spec.users
    )
    order = substream(spec.seed, "arrivals").permutation(spec.users)
    arrivals: list[tuple[int, str]] = []
    cursor = 0
    for n in range(1, intervals + 1):
        for _ in range(int(counts[n - 1])):
            arrivals.append((n, users[order[cursor]]))
            cursor += 1
    schedule = ArrivalSchedule(arrivals=tuple(arrivals), interval_count=intervals)
    return Dataset(store=store, catalog=catalog, schedule=schedule)


def write_dataset(dataset: Dataset, out_dir: str | Path) -> dict[str, Path]:
    """Writes scores.csv, catalog.csv, arrivals.csv under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "scores": out / "scores.csv",
        "catalog": out / "catalog.csv",
        "arrivals": out / "arrivals.csv",
    }
    # Dense dump: clipped scores may be exactly zero and must not vanish.
    write_scores(dataset.store, paths["scores"], include_zeros=True)
    write_catalog(dataset.catalog, paths["catalog"])
    write_arrivals(dataset.schedule, paths["arrivals"])
    return paths
