"""Session orchestration: interval planning feeding the online re-ranker.

A session replays an arrival schedule.  Interval by interval, the allocator
splits each provider's outstanding exposure floor over the remaining
intervals (Talmud rule over forecast interval capacities); the resulting
per-interval targets steer the re-ranker's target-exposure distribution.
Dual prices reset at interval boundaries.  At the end the ledger and the
per-user accuracies roll up into the metric suite.

Policies:
    bankfair_plus        full pipeline, regret-curved satisfaction
    bankfair_linear      same pipeline with Z' replaced by q / q*
    topk                 pure relevance ranking, no pricing
    greedy_min_exposure  relevance ranking with bottom-up slot overrides
                         granting providers still below their interval target
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .allocation import (
    AllocationPlan,
    FairnessSpec,
    TrafficStats,
    build_demand,
    forecast_traffic,
    plan_interval,
)
from .domain import (
    Dataset,
    ParseError,
    ProviderCatalog,
    PreferenceStore,
    RunConfig,
    Slate,
    ValidationError,
    position_weights,
    validate_dataset,
)
from .metrics import (
    ExposureLedger,
    QualityReport,
    _ideal_indices,
    esp,
    gini,
    mmr,
    quality_report,
    var_accuracy,
)
from .reranker import (
    DualState,
    SlateDecision,
    _solve_slate_core,
    _target_core,
    dual_update,
)
from .seeding import substream

__all__ = [
    "POLICIES",
    "DecisionRecord",
    "SessionLog",
    "run_session",
    "run_interval",
    "compute_session_metrics",
    "write_session_log",
    "read_session_log",
    "write_dual_csv",
]

POLICIES = ("bankfair_plus", "bankfair_linear", "topk", "greedy_min_exposure")

# Zero interval targets must not zero out merit shares entirely; blend in a
# small uniform floor so Var(e/share) stays conditioned.
_STEER_FLOOR = 1e-4


@dataclass(frozen=True)
class DecisionRecord:
    """One served slate, as persisted to the session log."""

    t: int
    interval: int
    user: str
    items: tuple[str, ...]
    ndcg: float
    z_prime: float
    objective: float | None


@dataclass
class SessionLog:
    policy: str
    config: RunConfig
    decisions: list[DecisionRecord]
    ledger: ExposureLedger
    plans: list[AllocationPlan]
    quality: QualityReport
    metrics: dict[str, float]
    min_exposure: dict[str, float]
    dual_trace: list[tuple[int, np.ndarray]] | None = None


class _Context:
    """Dense views of the dataset shared by every interval."""

    def __init__(self, store: PreferenceStore, catalog: ProviderCatalog, config: RunConfig):
        self.store = store
        self.catalog = catalog
        self.config = config
        self.owner_idx = catalog.owner_indices(store.items)
        self.P = catalog.n_providers
        self.K = config.K
        self.pw = position_weights(config.K)
        self.p_sum = float(self.pw.sum())
        self.merit_shares = catalog.merit_shares()
        self._ideal: dict[int, tuple[np.ndarray, float]] = {}

    def ideal(self, uidx: int) -> tuple[np.ndarray, float]:
        hit = self._ideal.get(uidx)
        if hit is None:
            row = self.store.matrix[uidx]
            idx = _ideal_indices(row, self.K)
            hit = (idx, float(self.pw @ row[idx]))
            self._ideal[uidx] = hit
        return hit


def _steering_shares(targets: np.ndarray, merit_shares: np.ndarray) -> np.ndarray:
    total = float(targets.sum())
    if total <= 0.0:
        return merit_shares.copy()
    shares = targets / total + _STEER_FLOOR / targets.shape[0]
    return shares / shares.sum()


def _decision_from_indices(
    ctx: _Context, user: str, slate_idx: np.ndarray, q: float, z: float, obj: float | None
) -> SlateDecision:
    slate = Slate.of(user, [ctx.store.items[i] for i in slate_idx])
    delta_e = np.zeros(ctx.P, dtype=np.float64)
    np.add.at(delta_e, ctx.owner_idx[slate_idx], ctx.pw)
    return SlateDecision(
        slate=slate,
        achieved_q=q,
        z_prime=z,
        objective=obj if obj is not None else float("nan"),
        exposure_delta=delta_e,
    )


def _dual_interval(
    ctx: _Context,
    n: int,
    users: Sequence[str],
    plan: AllocationPlan,
    state: DualState,
    ledger: ExposureLedger,
    kind: str,
    sat_scale: float | None,
    dual_sink: list[tuple[int, np.ndarray]] | None,
    t_offset: int,
) -> list[SlateDecision]:
    cfg = ctx.config
    targets = np.array(
        [plan.current_target[p] for p in ctx.catalog.providers], dtype=np.float64
    )
    steer = _steering_shares(targets, ctx.merit_shares)
    dirichlet = substream(cfg.seed, "target-dirichlet", n).dirichlet(
        np.ones(ctx.P), size=3
    )
    r_n = len(users)
    w_norm = sat_scale if sat_scale is not None else (1.0 / r_n if r_n else 1.0)
    sat_w = (1.0 - cfg.lam) * w_norm
    warm: np.ndarray | None = None
    decisions: list[SlateDecision] = []
    for t, user in enumerate(users, start=1):
        uidx = ctx.store.user_index[user]
        row = ctx.store.matrix[uidx]
        ideal_idx, q_star = ctx.ideal(uidx)
        item_cost = cfg.lam * state.mu[ctx.owner_idx]
        slate_idx, q, z, obj, delta_e = _solve_slate_core(
            row, item_cost, ctx.owner_idx, ctx.P, cfg.K,
            sat_w, q_star, ideal_idx, cfg.delta, kind, "parametric", 32,
        )
        e_t = _target_core(
            state.mu, cfg.lam, cfg.k_steep, cfg.g0, steer,
            dirichlet=dirichlet, warm=warm,
        )
        realized = delta_e / ctx.p_sum
        g = e_t - realized
        dual_update(state, g, realized=realized)
        warm = e_t
        ledger.add(ctx.owner_idx[slate_idx], ctx.pw, n)
        slate = Slate.of(user, [ctx.store.items[i] for i in slate_idx])
        decisions.append(
            SlateDecision(slate=slate, achieved_q=q, z_prime=z, objective=obj,
                          exposure_delta=delta_e)
        )
        if dual_sink is not None:
            dual_sink.append((t_offset + t, state.mu.copy()))
    return decisions


def _topk_interval(
    ctx: _Context, n: int, users: Sequence[str], ledger: ExposureLedger
) -> list[SlateDecision]:
    decisions = []
    for user in users:
        uidx = ctx.store.user_index[user]
        ideal_idx, q_star = ctx.ideal(uidx)
        ledger.add(ctx.owner_idx[ideal_idx], ctx.pw, n)
        z = 1.0  # slate equals the ideal, so Z'(q*) = 1 by construction
        decisions.append(
            _decision_from_indices(ctx, user, ideal_idx, q_star, z, None)
        )
    return decisions


def _greedy_interval(
    ctx: _Context,
    n: int,
    users: Sequence[str],
    plan: AllocationPlan,
    ledger: ExposureLedger,
) -> list[SlateDecision]:
    from .satisfaction import satisfaction_batch

    cfg = ctx.config
    targets = np.array(
        [plan.current_target[p] for p in ctx.catalog.providers], dtype=np.float64
    )
    earned = ledger.interval_vector(n)
    decisions = []
    for user in users:
        uidx = ctx.store.user_index[user]
        row = ctx.store.matrix[uidx]
        ideal_idx, q_star = ctx.ideal(uidx)
        slate = list(ideal_idx)
        proj = np.zeros(ctx.P, dtype=np.float64)
        np.add.at(proj, ctx.owner_idx[ideal_idx], ctx.pw)
        slot = cfg.K - 1
        while slot >= 0:
            under = (earned + proj) < targets - 1e-12
            if not under.any():
                break
            cur_owner = int(ctx.owner_idx[slate[slot]])
            if under[cur_owner]:
                slot -= 1  # never rob a provider that is itself short
                continue
            mask = under[ctx.owner_idx]
            mask[slate] = False
            if not mask.any():
                break
            masked = np.where(mask, row, -1.0)
            pick = int(np.argmax(masked))  # highest score, first index on ties
            proj[cur_owner] -= ctx.pw[slot]
            proj[int(ctx.owner_idx[pick])] += ctx.pw[slot]
            slate[slot] = pick
            slot -= 1
        slate_arr = np.array(slate, dtype=np.int64)
        q = float(ctx.pw @ row[slate_arr])
        if q_star > 0.0:
            z = float(satisfaction_batch(np.array([q / q_star]), 1.0, cfg.delta)[0])
        else:
            z = 1.0
        earned += proj
        ledger.add(ctx.owner_idx[slate_arr], ctx.pw, n)
        decisions.append(_decision_from_indices(ctx, user, slate_arr, q, z, None))
    return decisions


def run_interval(
    n: int,
    arrivals: Sequence[str],
    plan: AllocationPlan,
    state: DualState,
    store: PreferenceStore,
    catalog: ProviderCatalog,
    config: RunConfig,
    *,
    satisfaction: str = "regret",
    sat_scale: float | None = None,
    ledger: ExposureLedger | None = None,
) -> tuple[list[SlateDecision], ExposureLedger, DualState]:
    """One priced interval: serve ``arrivals`` in order, updating ``state``.

    Zero arrivals yield an empty decision list and an unchanged state.
    """
    ctx = _Context(store, catalog, config)
    if ledger is None:
        ledger = ExposureLedger(catalog.providers)
    decisions = _dual_interval(
        ctx, n, list(arrivals), plan, state, ledger, satisfaction, sat_scale, None, 0
    )
    return decisions, ledger, state


def run_session(
    dataset: Dataset,
    config: RunConfig,
    policy: str = "bankfair_plus",
    *,
    sat_scale: float | None = None,
    record_dual: bool = False,
) -> SessionLog:
    """Replays the schedule under ``policy`` and aggregates the metric suite."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; choose from {POLICIES}")
    store, catalog, schedule = dataset.store, dataset.catalog, dataset.schedule
    report = validate_dataset(store, catalog, schedule)
    if not report.passed:
        raise ValidationError(report.summary())
    if config.N != schedule.interval_count:
        raise ValidationError(
            f"config N={config.N} but the schedule has {schedule.interval_count} intervals"
        )
    if config.K > store.n_items:
        raise ValidationError(f"K={config.K} exceeds the {store.n_items}-item catalog")

    ctx = _Context(store, catalog, config)
    N = schedule.interval_count
    spec = FairnessSpec.merit_proportional(
        catalog, schedule.total, config.K, config.beta_min, N
    )
    estate = np.array([spec.min_total[p] for p in catalog.providers], dtype=np.float64)
    stats = TrafficStats()
    prior = schedule.total / N
    by_interval = schedule.users_by_interval()
    ledger = ExposureLedger(catalog.providers)
    plans: list[AllocationPlan] = []
    decisions: list[SlateDecision] = []
    records: list[DecisionRecord] = []
    dual_sink: list[tuple[int, np.ndarray]] | None = [] if record_dual else None
    needs_plan = policy != "topk"
    kind = "linear" if policy == "bankfair_linear" else "regret"
    t_global = 0

    for n in range(1, N + 1):
        users = by_interval[n - 1]
        plan = None
        if needs_plan:
            fc = forecast_traffic(
                stats, config.forecast_method, upcoming=N - n + 1, prior=prior
            )
            demands = build_demand(
                fc, config.K, config.alpha_demand, catalog,
                weighting="merit", start_interval=n,
            )
            estates = {p: float(estate[j]) for j, p in enumerate(catalog.providers)}
            plan = plan_interval(n, estates, demands)
            plans.append(plan)

        if policy in ("bankfair_plus", "bankfair_linear"):
            state = DualState(mu=np.zeros(ctx.P), eta=config.eta)
            interval_decisions = _dual_interval(
                ctx, n, users, plan, state, ledger, kind, sat_scale, dual_sink, t_global
            )
        elif policy == "greedy_min_exposure":
            interval_decisions = _greedy_interval(ctx, n, users, plan, ledger)
        else:
            interval_decisions = _topk_interval(ctx, n, users, ledger)

        for t, dec in enumerate(interval_decisions, start=1):
            uidx = store.user_index[dec.slate.user]
            _, q_star = ctx.ideal(uidx)
            nd = 1.0 if q_star <= 0.0 else min(max(dec.achieved_q / q_star, 0.0), 1.0)
            obj = dec.objective
            records.append(
                DecisionRecord(
                    t=t,
                    interval=n,
                    user=dec.slate.user,
                    items=dec.slate.entries,
                    ndcg=nd,
                    z_prime=dec.z_prime,
                    objective=None if obj is None or np.isnan(obj) else float(obj),
                )
            )
        decisions.extend(interval_decisions)
        t_global += len(users)
        stats.record(len(users))
        estate = np.maximum(estate - ledger.interval_vector(n), 0.0)

    quality, check_ledger, metric_values = compute_session_metrics(
        [d.slate for d in decisions],
        [r.interval for r in records],
        store,
        catalog,
        config.K,
        spec.min_total,
    )
    return SessionLog(
        policy=policy,
        config=config,
        decisions=records,
        ledger=check_ledger,
        plans=plans,
        quality=quality,
        metrics=metric_values,
        min_exposure=dict(spec.min_total),
        dual_trace=dual_sink,
    )


def compute_session_metrics(
    slates: Sequence[Slate],
    intervals: Sequence[int],
    store: PreferenceStore,
    catalog: ProviderCatalog,
    K: int,
    min_exposure: dict[str, float],
) -> tuple[QualityReport, ExposureLedger, dict[str, float]]:
    """Single code path for simulation-time and replayed metric computation."""
    if len(slates) != len(intervals):
        raise ValueError("slates and intervals differ in length")
    ledger = ExposureLedger(catalog.providers)
    owner_by_item = {item: catalog.provider_index[catalog.owner[item]] for item in catalog.items}
    pw = position_weights(K)
    for slate, n in zip(slates, intervals):
        idx = np.array([owner_by_item[item] for item in slate.entries], dtype=np.int64)
        ledger.add(idx, pw, n)
    report = quality_report(slates, store, K)
    vals = np.fromiter(report.per_user_ndcg.values(), dtype=np.float64)
    # The pair sum behind var is empty for a single distinct user, i.e. 0.
    var = var_accuracy(report) if len(report.per_user_ndcg) > 1 else 0.0
    metric_values = {
        "ndcg_mean": float(vals.mean()),
        "esp": esp(ledger, min_exposure),
        "gini": gini(ledger, catalog),
        "mmr": mmr(report),
        "var": var,
    }
    return report, ledger, metric_values


# ---------------------------------------------------------------------------
# Log persistence: one JSON object per decision plus a trailing summary.
# ---------------------------------------------------------------------------

def write_session_log(log: SessionLog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for rec in log.decisions:
            fh.write(json.dumps(
                {
                    "t": rec.t,
                    "interval": rec.interval,
                    "user_id": rec.user,
                    "items": list(rec.items),
                    "ndcg": rec.ndcg,
                    "z_prime": rec.z_prime,
                    "objective": rec.objective,
                },
                separators=(",", ":"),
            ))
            fh.write("\n")
        fh.write(json.dumps(
            {
                "type": "summary",
                "policy": log.policy,
                "K": log.config.K,
                "decisions": len(log.decisions),
                "metrics": {k: log.metrics[k] for k in sorted(log.metrics)},
            },
            separators=(",", ":"),
        ))
        fh.write("\n")


def read_session_log(path: str | Path) -> tuple[list[dict], dict]:
    """Parses a session log; raises ParseError naming the first bad line."""
    records: list[dict] = []
    summary: dict | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", line=ln) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", line=ln)
            if obj.get("type") == "summary":
                summary = obj
                continue
            if summary is not None:
                raise ParseError("decision rows after the summary", line=ln)
            missing = [k for k in ("t", "interval", "user_id", "items") if k not in obj]
            if missing:
                raise ParseError(f"missing fields {missing}", line=ln)
            records.append(obj)
    if summary is None:
        raise ParseError("log has no trailing summary (truncated?)")
    if summary.get("decisions") != len(records):
        raise ParseError(
            f"summary claims {summary.get('decisions')} decisions, found {len(records)}"
        )
    return records, summary


def write_dual_csv(
    trace: Iterable[tuple[int, np.ndarray]],
    providers: Sequence[str],
    path: str | Path,
) -> None:
    """t,provider_id,mu rows for every recorded price vector."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "provider_id", "mu"])
        for t, mu in trace:
            for j, p in enumerate(providers):
                w.writerow([t, p, repr(float(mu[j]))])
