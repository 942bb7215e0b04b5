"""Exposure accounting and the session metric suite.

Exposure is position-decayed: an item shown at rank k earns its provider
p(k) = 1/log2(k+1).  Accuracy metrics are NDCG-based; fairness metrics
compare realized exposure against provider merit.  All bulk reductions go
through numpy sums (pairwise summation) so error stays bounded on large runs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import (
    PreferenceStore,
    ProviderCatalog,
    Slate,
    position_weights,
)

__all__ = [
    "ExposureLedger",
    "QualityReport",
    "dcg",
    "ideal_dcg",
    "ideal_slate",
    "ndcg",
    "record_exposure",
    "esp",
    "gini",
    "mmr",
    "var_accuracy",
    "quality_report",
    "write_metrics_csv",
    "METRIC_NAMES",
]

METRIC_NAMES = ("ndcg_mean", "esp", "gini", "mmr", "var")


class ExposureLedger:
    """Decayed exposure per provider, in total and per interval."""

    def __init__(self, providers: Sequence[str]):
        if not providers:
            raise ValueError("ledger needs at least one provider")
        self.providers: tuple[str, ...] = tuple(providers)
        self.provider_index: dict[str, int] = {p: j for j, p in enumerate(self.providers)}
        self._raw = np.zeros(len(self.providers), dtype=np.float64)
        self._per_interval: dict[int, np.ndarray] = {}

    def add(self, owner_idx: np.ndarray, weights: np.ndarray, interval: int) -> None:
        """Credit weights[j] to provider owner_idx[j] within ``interval``."""
        np.add.at(self._raw, owner_idx, weights)
        row = self._per_interval.get(interval)
        if row is None:
            row = self._per_interval[interval] = np.zeros_like(self._raw)
        np.add.at(row, owner_idx, weights)

    @property
    def raw(self) -> dict[str, float]:
        return {p: float(self._raw[j]) for j, p in enumerate(self.providers)}

    @property
    def normalized(self) -> dict[str, float]:
        """Exposure shares; all zero while nothing has been recorded."""
        total = float(self._raw.sum())
        if total <= 0.0:
            return {p: 0.0 for p in self.providers}
        return {p: float(self._raw[j] / total) for j, p in enumerate(self.providers)}

    @property
    def per_interval(self) -> dict[int, dict[str, float]]:
        return {
            n: {p: float(row[j]) for j, p in enumerate(self.providers)}
            for n, row in sorted(self._per_interval.items())
        }

    def raw_vector(self) -> np.ndarray:
        return self._raw.copy()

    def interval_vector(self, interval: int) -> np.ndarray:
        row = self._per_interval.get(interval)
        return row.copy() if row is not None else np.zeros_like(self._raw)


@dataclass(frozen=True)
class QualityReport:
    """Per-user accuracy aggregates.  NDCG = q / q* with the 0/0 case -> 1."""

    per_user_dcg: dict[str, float]
    per_user_ideal: dict[str, float]
    per_user_ndcg: dict[str, float]


def _slate_scores(slate: Slate, store: PreferenceStore) -> np.ndarray:
    row = store.scores_for(slate.user)
    out = np.empty(slate.K, dtype=np.float64)
    for j, item in enumerate(slate.entries):
        i = store.item_index.get(item)
        out[j] = row[i] if i is not None else 0.0
    return out


def dcg(slate: Slate, store: PreferenceStore, K: int) -> float:
    """Position-decayed quality q = sum_k p(k) * s(u, i_k)."""
    if slate.K != K:
        raise ValueError(f"slate has K={slate.K}, expected {K}")
    pw = position_weights(K)
    return float(pw @ _slate_scores(slate, store))


def _ideal_indices(scores_row: np.ndarray, K: int) -> np.ndarray:
    """Indices of the K best scores, ties broken toward the lower index."""
    if K > scores_row.shape[0]:
        raise ValueError(f"need at least K={K} items, have {scores_row.shape[0]}")
    order = np.lexsort((np.arange(scores_row.shape[0]), -scores_row))
    return order[:K]


def ideal_slate(user: str, store: PreferenceStore, K: int) -> Slate:
    """Pure-relevance slate: top-K by score, descending, index tie-break."""
    idx = _ideal_indices(store.scores_for(user), K)
    return Slate.of(user, [store.items[i] for i in idx])


def ideal_dcg(user: str, store: PreferenceStore, K: int) -> float:
    """Best achievable q* for the user at slate size K."""
    row = store.scores_for(user)
    idx = _ideal_indices(row, K)
    pw = position_weights(K)
    return float(pw @ row[idx])


def ndcg(slate: Slate, store: PreferenceStore, K: int) -> float:
    """q / q*, defined as 1 when q* = 0; clamped into [0, 1] against fp noise."""
    q = dcg(slate, store, K)
    q_star = ideal_dcg(slate.user, store, K)
    if q_star <= 0.0:
        return 1.0
    return min(max(q / q_star, 0.0), 1.0)


def record_exposure(
    ledger: ExposureLedger,
    slate: Slate,
    catalog: ProviderCatalog,
    interval: int,
) -> ExposureLedger:
    """Credits every slate position to its item's provider; returns the ledger."""
    owner_idx = catalog.owner_indices(slate.entries)
    owner_idx = np.array(
        [ledger.provider_index[catalog.providers[j]] for j in owner_idx], dtype=np.int64
    )
    ledger.add(owner_idx, position_weights(slate.K), interval)
    return ledger


def esp(ledger: ExposureLedger, min_exposure: Mapping[str, float]) -> float:
    """Share of providers whose exposure meets their floor: |{p: e_p >= m_p}| / |P|."""
    if not ledger.providers:
        raise ValueError("no providers")
    missing = [p for p in ledger.providers if p not in min_exposure]
    if missing:
        raise ValueError(f"min_exposure missing providers: {missing[:3]}")
    raw = ledger.raw
    hits = sum(1 for p in ledger.providers if raw[p] >= min_exposure[p])
    return hits / len(ledger.providers)


def gini(ledger: ExposureLedger, catalog: ProviderCatalog) -> float:
    """Gini coefficient of merit-normalized exposure e_p / gamma_p.

    Mean absolute difference over ordered pairs divided by twice the mean;
    0 when exposure is exactly merit-proportional, toward 1 under full
    concentration.  Scale-invariant in both exposure and merit.
    """
    y = _merit_normalized(ledger, catalog)
    total = y.sum()
    if total <= 0.0:
        raise ValueError("total exposure is zero")
    diffs = np.abs(y[:, None] - y[None, :]).sum()
    return float(diffs / (2.0 * y.shape[0] * total))


def _merit_normalized(ledger: ExposureLedger, catalog: ProviderCatalog) -> np.ndarray:
    e = ledger.raw_vector()
    g = np.array([catalog.merit.get(p, 0.0) for p in ledger.providers], dtype=np.float64)
    if np.any(g <= 0.0):
        bad = [p for p, v in zip(ledger.providers, g) if v <= 0.0]
        raise ValueError(f"providers with non-positive merit: {bad[:3]}")
    return e / g


def mmr(report: QualityReport) -> float:
    """Min-max ratio of per-user NDCG; 1 means perfectly even accuracy."""
    if not report.per_user_ndcg:
        raise ValueError("no users")
    vals = np.fromiter(report.per_user_ndcg.values(), dtype=np.float64)
    hi = vals.max()
    if hi <= 0.0:
        raise ValueError("max NDCG is zero")
    return float(vals.min() / hi)


def var_accuracy(report: QualityReport) -> float:
    """Mean squared NDCG gap over unordered user pairs: (1/n^2) sum_{k<l} (v_k - v_l)^2."""
    vals = np.fromiter(report.per_user_ndcg.values(), dtype=np.float64)
    n = vals.shape[0]
    if n < 2:
        raise ValueError("need at least two users")
    if float(np.ptp(vals)) == 0.0:
        # Keep the result exactly zero for uniform accuracy; the mean-based
        # form below can leave rounding dust.
        return 0.0
    # sum_{k<l} (v_k - v_l)^2 == n * sum_k (v_k - mean)^2, so the pair sum
    # collapses to the population variance without an O(n^2) blowup.
    return float(np.var(vals))


def quality_report(
    slates: Iterable[Slate],
    store: PreferenceStore,
    K: int,
) -> QualityReport:
    """Aggregates slates per user; repeat visitors contribute their mean DCG."""
    pw = position_weights(K)
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for slate in slates:
        if slate.K != K:
            raise ValueError(f"slate has K={slate.K}, expected {K}")
        q = float(pw @ _slate_scores(slate, store))
        sums[slate.user] = sums.get(slate.user, 0.0) + q
        counts[slate.user] = counts.get(slate.user, 0) + 1
    if not sums:
        raise ValueError("no slates")
    per_dcg: dict[str, float] = {}
    per_ideal: dict[str, float] = {}
    per_ndcg: dict[str, float] = {}
    for user in sums:
        mean_q = sums[user] / counts[user]
        q_star = ideal_dcg(user, store, K)
        per_dcg[user] = mean_q
        per_ideal[user] = q_star
        per_ndcg[user] = 1.0 if q_star <= 0.0 else min(max(mean_q / q_star, 0.0), 1.0)
    return QualityReport(per_user_dcg=per_dcg, per_user_ideal=per_ideal, per_user_ndcg=per_ndcg)


def write_metrics_csv(metrics: Mapping[str, float], K: int, path: str | Path) -> None:
    """metric,K,value rows in the fixed METRIC_NAMES order."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "K", "value"])
        for name in METRIC_NAMES:
            w.writerow([name, K, repr(float(metrics[name]))])
