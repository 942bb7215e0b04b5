"""Online re-ranking primitives: the per-user slate optimizer, the
target-exposure search, and the dual mirror-descent price update.

Each arriving user is served the slate maximizing

    (1 - lambda) * w_norm * Z'(q(X))  -  lambda * sum_k p(k) * mu[owner(i_k)]

i.e. regret-weighted satisfaction against provider prices mu, with the price
term scaled by lambda so the trade-off degenerates cleanly at both ends
(lambda = 0 reproduces pure relevance ranking for any mu).  Prices evolve by
mirror descent on the gap between a target exposure distribution and the
exposure the served slate realized.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .domain import ProviderCatalog, PreferenceStore, Slate, position_weights
from .metrics import _ideal_indices
from .satisfaction import FuzzyParams, satisfaction_batch, satisfaction_slope

__all__ = [
    "SlateDecision",
    "DualState",
    "solve_user_slate",
    "target_exposure",
    "subgradient",
    "dual_update",
]

_EXACT_MAX_ITEMS = 12
_EXACT_MAX_K = 4
_PGA_ITERS = 150
_PGA_STEP = 0.05
_PGA_GROW = 1.3


@dataclass(frozen=True)
class SlateDecision:
    """Solver output for one user arrival."""

    slate: Slate
    achieved_q: float
    z_prime: float
    objective: float
    exposure_delta: np.ndarray  # decayed exposure credited per provider


@dataclass
class DualState:
    """Mirror-descent price vector plus bookkeeping for its invariants."""

    mu: np.ndarray
    eta: float
    t: int = 0
    cum_g: np.ndarray = field(default=None)  # type: ignore[assignment]
    cum_realized: np.ndarray = field(default=None)  # type: ignore[assignment]
    max_g_inf: float = 0.0

    def __post_init__(self):
        if not (self.eta > 0.0):
            raise ValueError("eta must be > 0")
        self.mu = np.asarray(self.mu, dtype=np.float64).copy()
        if self.cum_g is None:
            self.cum_g = np.zeros_like(self.mu)
        if self.cum_realized is None:
            self.cum_realized = np.zeros_like(self.mu)
        self._mu0_inf = float(np.max(np.abs(self.mu))) if self.mu.size else 0.0

    @property
    def cumulative_exposure(self) -> np.ndarray:
        """Mean realized (simplex-normalized) exposure over the steps so far."""
        if self.t == 0:
            return np.zeros_like(self.mu)
        return self.cum_realized / self.t


def subgradient(decision: SlateDecision, e_target: np.ndarray) -> np.ndarray:
    """g_t = e_t - realized, both on the provider simplex.

    The realized distribution divides the decision's exposure delta by the
    total position mass sum_k p(k) of its slate.
    """
    p_sum = float(position_weights(decision.slate.K).sum())
    return np.asarray(e_target, dtype=np.float64) - decision.exposure_delta / p_sum


def dual_update(state: DualState, g: np.ndarray, realized: np.ndarray | None = None) -> DualState:
    """mu <- mu - (eta/2) * g; prices are unconstrained (D = R^P).

    Asserts the running bound ||mu_t|| <= ||mu_0|| + (eta/2) * t * max||g||.
    """
    g = np.asarray(g, dtype=np.float64)
    state.mu -= 0.5 * state.eta * g
    state.t += 1
    state.cum_g += g
    state.max_g_inf = max(state.max_g_inf, float(np.max(np.abs(g))) if g.size else 0.0)
    if realized is not None:
        state.cum_realized += realized
    bound = state._mu0_inf + 0.5 * state.eta * state.t * state.max_g_inf
    assert float(np.max(np.abs(state.mu))) <= bound + 1e-9, "dual iterate escaped its bound"
    return state


# ---------------------------------------------------------------------------
# Per-user slate optimization.
# ---------------------------------------------------------------------------

def _order_by_gain(gain: np.ndarray, K: int) -> np.ndarray:
    """Top-K indices by gain, descending, ties toward the lower index."""
    order = np.lexsort((np.arange(gain.shape[0]), -gain))
    return order[:K]


class _SlateProblem:
    """One user's slate instance; bundles evaluation and candidate search."""

    def __init__(
        self,
        scores: np.ndarray,
        item_cost: np.ndarray,
        K: int,
        sat_w: float,
        q_star: float,
        delta: float,
        kind: str,
    ):
        self.scores = scores
        self.item_cost = item_cost
        self.K = K
        self.pw = position_weights(K)
        self.sat_w = sat_w
        self.q_star = q_star
        self.delta = delta
        self.kind = kind

    def z_batch(self, q: np.ndarray) -> np.ndarray:
        if self.q_star <= 0.0:
            return np.ones_like(q)
        if self.kind == "linear":
            return np.clip(q / self.q_star, 0.0, 1.0)
        # Quality enters the regret curve on the user's own [0, 1] scale so
        # that delta means the same thing for every user and every K.
        return satisfaction_batch(q / self.q_star, 1.0, self.delta)

    def slope(self, q: float) -> float:
        if self.q_star <= 0.0:
            return 0.0
        if self.kind == "linear":
            return 1.0 / self.q_star
        return satisfaction_slope(q / self.q_star, 1.0, self.delta) / self.q_star

    def evaluate(self, slates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Objective and quality per row of an (M, K) index array."""
        q = self.scores[slates] @ self.pw
        cost = self.item_cost[slates] @ self.pw
        if self.sat_w == 0.0:
            return -cost, q
        return self.sat_w * self.z_batch(q) - cost, q


def _parametric_search(prob: _SlateProblem, ideal_idx: np.ndarray, scan_points: int) -> tuple[np.ndarray, float, float]:
    """Frontier scan plus local refinement; the relevance slate always competes."""
    K = prob.K
    candidates: list[np.ndarray] = [ideal_idx]

    if prob.sat_w > 0.0 and prob.q_star > 0.0:
        lo = prob.sat_w * prob.slope(prob.q_star)
        hi = prob.sat_w * prob.slope(0.0)
        if hi <= lo * (1.0 + 1e-12):
            grid = np.array([lo])
        else:
            grid = np.geomspace(lo, hi, scan_points)
    else:
        grid = np.array([0.0])

    # Linearized gains; each weight contributes its slate ordered by gain and
    # the same item set re-ordered by raw score.
    C = grid[:, None] * prob.scores[None, :] - prob.item_cost[None, :]
    idx = np.arange(prob.scores.shape[0])
    for w_row in range(grid.shape[0]):
        sel = np.lexsort((idx, -C[w_row]))[:K]
        candidates.append(sel)
        by_score = sel[np.lexsort((sel, -prob.scores[sel]))]
        candidates.append(by_score)

    cand = np.vstack(candidates)
    obj, q = prob.evaluate(cand)
    best = int(np.argmax(obj))
    best_slate = cand[best].copy()
    best_obj = float(obj[best])
    best_q = float(q[best])

    def consider(rows: np.ndarray) -> bool:
        nonlocal best_slate, best_obj, best_q
        if rows.size == 0:
            return False
        o, qq = prob.evaluate(rows)
        j = int(np.argmax(o))
        if o[j] > best_obj:
            best_slate = rows[j].copy()
            best_obj = float(o[j])
            best_q = float(qq[j])
            return True
        return False

    # Tangent re-linearization around the incumbent.
    if prob.sat_w > 0.0 and prob.q_star > 0.0:
        for _ in range(3):
            w = prob.sat_w * prob.slope(best_q)
            gain = w * prob.scores - prob.item_cost
            sel = _order_by_gain(gain, K)
            if not consider(sel[None, :]):
                break

    pool = np.unique(cand)

    for _ in range(2):
        improved = False
        # Position swaps within the incumbent.
        if K > 1:
            pairs = list(itertools.combinations(range(K), 2))
            swapped = np.tile(best_slate, (len(pairs), 1))
            for r, (a, b) in enumerate(pairs):
                swapped[r, a], swapped[r, b] = swapped[r, b], swapped[r, a]
            improved |= consider(swapped)
        # Single-position replacements drawn from the candidate pool.
        outside = pool[~np.isin(pool, best_slate)]
        if outside.size:
            rows = np.tile(best_slate, (K * outside.size, 1))
            for slot in range(K):
                rows[slot * outside.size : (slot + 1) * outside.size, slot] = outside
            improved |= consider(rows)
        if not improved:
            break

    return best_slate, best_obj, best_q


def _exact_search(prob: _SlateProblem, ideal_idx: np.ndarray) -> tuple[np.ndarray, float, float]:
    n = prob.scores.shape[0]
    if n > _EXACT_MAX_ITEMS or prob.K > _EXACT_MAX_K:
        raise ValueError(
            f"exact mode is limited to {_EXACT_MAX_ITEMS} items and K <= {_EXACT_MAX_K}"
        )
    perms = np.array(list(itertools.permutations(range(n), prob.K)), dtype=np.int64)
    cand = np.vstack([ideal_idx[None, :], perms])
    obj, q = prob.evaluate(cand)
    best = int(np.argmax(obj))
    return cand[best].copy(), float(obj[best]), float(q[best])


def _solve_slate_core(
    scores: np.ndarray,
    item_cost: np.ndarray,
    owner_idx: np.ndarray,
    n_providers: int,
    K: int,
    sat_w: float,
    q_star: float,
    ideal_idx: np.ndarray,
    delta: float,
    kind: str,
    mode: str,
    scan_points: int,
) -> tuple[np.ndarray, float, float, float, np.ndarray]:
    prob = _SlateProblem(scores, item_cost, K, sat_w, q_star, delta, kind)
    if mode == "exact":
        slate_idx, obj, q = _exact_search(prob, ideal_idx)
    elif mode == "parametric":
        slate_idx, obj, q = _parametric_search(prob, ideal_idx, scan_points)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    z = float(prob.z_batch(np.array([q]))[0])
    delta_e = np.zeros(n_providers, dtype=np.float64)
    np.add.at(delta_e, owner_idx[slate_idx], prob.pw)
    return slate_idx, q, z, obj, delta_e


def solve_user_slate(
    user: str,
    store: PreferenceStore,
    catalog: ProviderCatalog,
    mu: Mapping[str, float] | np.ndarray,
    lam: float,
    delta: float,
    K: int,
    mode: str = "parametric",
    *,
    w_norm: float = 1.0,
    satisfaction: str = "regret",
    scan_points: int = 32,
) -> SlateDecision:
    """Best-response slate for one user against prices ``mu``.

    ``mode='exact'`` enumerates every ordered slate (small instances only)
    and serves as the oracle for the default parametric search, which scans
    the satisfaction slope range on a geometric grid and refines locally.
    """
    if not (0.0 <= lam <= 1.0):
        raise ValueError("lambda must lie in [0, 1]")
    if satisfaction not in ("regret", "linear"):
        raise ValueError(f"unknown satisfaction kind {satisfaction!r}")
    if K < 1 or K > store.n_items:
        raise ValueError(f"K={K} impossible with {store.n_items} items")
    scores = store.scores_for(user)
    owner_idx = catalog.owner_indices(store.items)
    mu_vec = _mu_vector(mu, catalog)
    item_cost = lam * mu_vec[owner_idx]
    ideal_idx = _ideal_indices(scores, K)
    pw = position_weights(K)
    q_star = float(pw @ scores[ideal_idx])
    slate_idx, q, z, obj, delta_e = _solve_slate_core(
        scores, item_cost, owner_idx, catalog.n_providers, K,
        (1.0 - lam) * w_norm, q_star, ideal_idx, delta, satisfaction, mode, scan_points,
    )
    slate = Slate.of(user, [store.items[i] for i in slate_idx])
    return SlateDecision(
        slate=slate, achieved_q=q, z_prime=z, objective=obj, exposure_delta=delta_e
    )


def _mu_vector(mu: Mapping[str, float] | np.ndarray | Sequence[float], catalog: ProviderCatalog) -> np.ndarray:
    if isinstance(mu, Mapping):
        missing = [p for p in catalog.providers if p not in mu]
        if missing:
            raise ValueError(f"mu missing providers: {missing[:3]}")
        return np.array([float(mu[p]) for p in catalog.providers], dtype=np.float64)
    vec = np.asarray(mu, dtype=np.float64)
    if vec.shape != (catalog.n_providers,):
        raise ValueError(f"mu must have shape ({catalog.n_providers},)")
    return vec


# ---------------------------------------------------------------------------
# Target exposure: maximize lam * G'(Var(e / gamma)) + mu . e on the simplex.
# ---------------------------------------------------------------------------

@njit(cache=True, fastmath=True)
def _project_simplex(v):
    n = v.shape[0]
    u = np.sort(v)[::-1]
    css = 0.0
    theta = 0.0
    for i in range(n):
        css += u[i]
        t = (css - 1.0) / (i + 1)
        if u[i] - t > 0.0:
            theta = t
    out = np.empty(n)
    for i in range(n):
        out[i] = max(v[i] - theta, 0.0)
    return out


@njit(cache=True, fastmath=True)
def _fair_objective(e, mu, inv_shares, lam, k_steep, g0):
    n = e.shape[0]
    mean_y = 0.0
    for p in range(n):
        mean_y += e[p] * inv_shares[p]
    mean_y /= n
    var = 0.0
    for p in range(n):
        d = e[p] * inv_shares[p] - mean_y
        var += d * d
    var /= n - 1
    x = k_steep * (var - 0.5 * g0)
    if x > 700.0:
        x = 700.0
    elif x < -700.0:
        x = -700.0
    membership = 1.0 - 1.0 / (1.0 + math.exp(-x))
    lin = 0.0
    for p in range(n):
        lin += mu[p] * e[p]
    return lam * membership + lin


@njit(cache=True, fastmath=True)
def _pga_kernel(starts, mu, inv_shares, lam, k_steep, g0, max_iter, step0, grow):
    R, n = starts.shape
    best_e = starts[0].copy()
    best_f = -1.0e300
    grad = np.empty(n)
    trial = np.empty(n)
    for r in range(R):
        e = starts[r].copy()
        f = _fair_objective(e, mu, inv_shares, lam, k_steep, g0)
        step = step0
        stall = 0
        for _ in range(max_iter):
            mean_y = 0.0
            for p in range(n):
                mean_y += e[p] * inv_shares[p]
            mean_y /= n
            var = 0.0
            for p in range(n):
                d = e[p] * inv_shares[p] - mean_y
                var += d * d
            var /= n - 1
            x = k_steep * (var - 0.5 * g0)
            if x > 700.0:
                x = 700.0
            elif x < -700.0:
                x = -700.0
            s = 1.0 / (1.0 + math.exp(-x))
            coef = -lam * k_steep * s * (1.0 - s) * 2.0 / (n - 1)
            gmax = 0.0
            for p in range(n):
                g = coef * (e[p] * inv_shares[p] - mean_y) * inv_shares[p] + mu[p]
                grad[p] = g
                trial[p] = e[p] + step * g
                a = abs(g)
                if a > gmax:
                    gmax = a
            if step * gmax < 1e-12:
                break
            cand = _project_simplex(trial)
            fc = _fair_objective(cand, mu, inv_shares, lam, k_steep, g0)
            if fc > f:
                # Count near-flat gains toward the stall budget so a
                # converged restart stops instead of sawtoothing.
                if fc - f < 1e-8 * (1.0 + abs(f)):
                    stall += 1
                else:
                    stall = 0
                for p in range(n):
                    e[p] = cand[p]
                f = fc
                step *= grow
            else:
                step *= 0.5
                stall += 1
                if step < 1e-14:
                    break
            if stall >= 8:
                break
        if f > best_f:
            best_f = f
            for p in range(n):
                best_e[p] = e[p]
    return best_e, best_f


def _fair_objective_np(e: np.ndarray, mu: np.ndarray, shares: np.ndarray, lam: float, k: float, g0: float) -> np.ndarray:
    """Vectorized objective over rows of e; mirrors the kernel's formula."""
    y = e / shares
    n = e.shape[-1]
    var = y.var(axis=-1, ddof=1) if n > 1 else np.zeros(e.shape[:-1])
    x = np.clip(k * (var - 0.5 * g0), -700.0, 700.0)
    membership = 1.0 - 1.0 / (1.0 + np.exp(-x))
    return lam * membership + e @ mu


def _target_core(
    mu: np.ndarray,
    lam: float,
    k_steep: float,
    g0: float,
    shares: np.ndarray,
    dirichlet: np.ndarray | None = None,
    warm: np.ndarray | None = None,
) -> np.ndarray:
    P = mu.shape[0]
    if P == 1:
        return np.ones(1, dtype=np.float64)
    if lam == 0.0:
        # Pure linear objective: a vertex, first max on ties.
        e = np.zeros(P, dtype=np.float64)
        e[int(np.argmax(mu))] = 1.0
        return e
    if float(np.ptp(mu)) == 0.0:
        # Constant price shifts the objective by mu; the membership term
        # alone is maximized exactly at merit-proportional exposure.
        return shares / shares.sum()

    rows = [np.full(P, 1.0 / P), shares / shares.sum()]
    if dirichlet is not None:
        rows.extend(np.asarray(dirichlet, dtype=np.float64))
    if warm is not None:
        rows.append(np.asarray(warm, dtype=np.float64))
    starts = np.vstack(rows)
    inv_shares = 1.0 / shares
    best_e, best_f = _pga_kernel(
        starts, mu, inv_shares, lam, k_steep, g0, _PGA_ITERS, _PGA_STEP, _PGA_GROW
    )
    # Vertices are cheap to check and catch the price-dominated regime.
    verts = np.eye(P)
    vf = _fair_objective_np(verts, mu, shares, lam, k_steep, g0)
    j = int(np.argmax(vf))
    if vf[j] > best_f:
        return verts[j]
    return best_e


def target_exposure(
    mu: Mapping[str, float] | np.ndarray,
    lam: float,
    fuzzy: FuzzyParams,
    catalog: ProviderCatalog,
    *,
    dirichlet: np.ndarray | None = None,
    warm: np.ndarray | None = None,
    seed: int = 0,
) -> np.ndarray:
    """argmax over the simplex of lam * G'(Var(e/gamma)) + mu . e.

    Multi-start projected gradient ascent (uniform, merit-proportional,
    three Dirichlet draws, plus an optional warm start), followed by a
    vertex sweep.  Returns the distribution aligned with catalog.providers.
    """
    if not (0.0 <= lam <= 1.0):
        raise ValueError("lambda must lie in [0, 1]")
    mu_vec = _mu_vector(mu, catalog)
    shares = catalog.merit_shares()
    if dirichlet is None:
        from .seeding import substream

        rng = substream(seed, "target-exposure")
        dirichlet = rng.dirichlet(np.ones(catalog.n_providers), size=3)
    return _target_core(
        mu_vec, lam, fuzzy.k_steep, fuzzy.g0, shares, dirichlet=dirichlet, warm=warm
    )
