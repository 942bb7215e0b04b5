"""End-to-end acceptance checks, one test per release criterion.

Each test prints a single PASS line on success (run with -s to see them);
under plain ``pytest -v`` the per-test PASSED/FAILED line serves the same
purpose.  Timed sections warm the jit kernels first so compilation never
counts against a budget.
"""

import itertools
import math
import time

import numpy as np
import pytest

from fairslate import (
    ExposureLedger,
    FuzzyParams,
    ProviderCatalog,
    QualityReport,
    RunConfig,
    Slate,
    SyntheticSpec,
    dcg,
    esp,
    fairness_membership,
    generate_dataset,
    gini,
    ideal_dcg,
    mmr,
    ndcg,
    normalized_satisfaction,
    regret_rejoice,
    run_session,
    solve_user_slate,
    talmud_allocate,
    target_exposure,
    var_accuracy,
    write_session_log,
)
from fairslate.seeding import substream

from conftest import make_store


def _ok(line):
    print(f"PASS  {line}")


@pytest.fixture(scope="module", autouse=True)
def warm_kernels():
    # One tiny end-to-end run compiles every jit kernel up front.
    spec = SyntheticSpec(users=30, items=40, providers=4, traffic_pattern="constant", seed=1)
    ds = generate_dataset(spec, intervals=2)
    run_session(ds, RunConfig(K=4, N=2, lam=0.5, delta=1.0, seed=1), "bankfair_plus")


@pytest.fixture(scope="module")
def reference_sessions(reference_dataset):
    """Sessions shared by the trade-off, trend, and determinism criteria."""
    out = {}
    for lam, delta in ((0.0, 1.0), (0.9, 1.0), (0.7, 0.1), (0.7, 5.0)):
        cfg = RunConfig(K=10, N=8, lam=lam, delta=delta, seed=42)
        t0 = time.perf_counter()
        log = run_session(reference_dataset, cfg, "bankfair_plus")
        out[(lam, delta)] = (log, time.perf_counter() - t0)
    return out


def test_01_bankruptcy_rule_table_and_properties():
    claims = [100.0, 200.0, 300.0]
    third = 100.0 / 3.0
    table = {
        100.0: [third, third, third],
        200.0: [50.0, 75.0, 75.0],
        300.0: [50.0, 100.0, 150.0],
    }
    for estate, want in table.items():
        got = talmud_allocate(estate, claims)
        assert np.allclose(got, want, atol=1e-9), (estate, got)

    rng = np.random.default_rng(20240817)
    t0 = time.perf_counter()
    for _ in range(10_000):
        n = int(rng.integers(2, 11))
        d = np.sort(rng.uniform(0.5, 100.0, n))
        estate = float(rng.uniform(0.0, d.sum()))
        x = np.asarray(talmud_allocate(estate, d))
        # Exhaustion: awards spend the estate exactly.
        assert abs(math.fsum(x) - estate) < 1e-8
        # Boundedness: nobody gets less than zero or more than claimed.
        assert np.all(x >= -1e-12) and np.all(x <= d + 1e-12)
        # Order preservation: larger claims earn weakly more award and loss.
        assert np.all(np.diff(x) >= -1e-9)
        assert np.all(np.diff(d - x) >= -1e-9)
        # Self-duality: awards for the estate mirror losses for the deficit.
        dual = np.asarray(talmud_allocate(float(d.sum()) - estate, d))
        assert np.allclose(x, d - dual, atol=1e-8)
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0, f"property suite took {elapsed:.2f}s"
    _ok("1. bankruptcy rule: classic table at 1e-9; 10k-instance properties "
        f"in {elapsed:.2f}s")


def test_02_regret_curve_shape_and_anchors():
    q_star, delta = 1.0, 1.0
    assert regret_rejoice(q_star, q_star, delta) == 0.0

    # Analytic first derivative against central differences on a fine grid,
    # kept inside the open interval so the stencil stays in-domain.
    h = 1e-6
    qs = np.linspace(10 * h, q_star - 10 * h, 1000)
    for q in qs:
        analytic = delta * math.exp(-delta * (q - q_star))
        fd = (regret_rejoice(q + h, q_star, delta) - regret_rejoice(q - h, q_star, delta)) / (2 * h)
        assert analytic > 0.0
        assert abs(fd - analytic) / analytic < 1e-6
        second = (
            regret_rejoice(q + h, q_star, delta)
            - 2.0 * regret_rejoice(q, q_star, delta)
            + regret_rejoice(q - h, q_star, delta)
        ) / (h * h)
        assert second < 0.0

    for d in (0.25, 1.0, 5.0):
        assert abs(normalized_satisfaction(0.0, q_star, d)) < 1e-12
        assert abs(normalized_satisfaction(q_star, q_star, d) - 1.0) < 1e-12

    gap = max(
        abs(normalized_satisfaction(q, q_star, 1e-4) - q / q_star)
        for q in np.linspace(0.0, q_star, 1000)
    )
    assert gap < 1e-3, f"small-delta limit gap {gap}"
    _ok("2. regret curve: zero at ideal, increasing, concave (1e-6 rel); "
        f"unit anchors at 1e-12; small-delta gap {gap:.2e} < 1e-3")


def test_03_lambda_zero_matches_plain_topk(reference_dataset):
    cfg = RunConfig(K=10, N=8, lam=0.0, delta=1.0, seed=42)
    ours = run_session(reference_dataset, cfg, "bankfair_plus")
    plain = run_session(reference_dataset, cfg, "topk")
    assert len(ours.decisions) == len(plain.decisions)
    for a, b in zip(ours.decisions, plain.decisions):
        assert a.user == b.user
        assert a.items == b.items
    assert ours.metrics["ndcg_mean"] == 1.0
    _ok("3. lam=0 degenerates to plain top-K: identical slates, mean NDCG 1.0")


def test_04_parametric_solver_matches_enumeration():
    rng = substream(20240817, "solver-oracle")
    t0 = time.perf_counter()
    for _ in range(1000):
        n_items = int(rng.integers(2, 9))
        K = int(rng.integers(1, min(3, n_items) + 1))
        P = int(rng.integers(1, 4))
        store = make_store(rng.random((1, n_items)))
        catalog = ProviderCatalog({f"i{j}": f"p{int(rng.integers(P))}" for j in range(n_items)})
        mu = rng.normal(0.0, 1.0, size=catalog.n_providers)
        fast = solve_user_slate("u0", store, catalog, mu, lam=0.5, delta=1.0, K=K)
        slow = solve_user_slate("u0", store, catalog, mu, lam=0.5, delta=1.0, K=K, mode="exact")
        # Within 0.1% of the enumerated optimum, measured relative to its
        # magnitude so the bound means the same thing for negative values.
        gap = slow.objective - fast.objective
        assert gap <= 1e-3 * max(abs(slow.objective), 1e-12), (gap, slow.objective)
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0, f"solver oracle took {elapsed:.2f}s"
    _ok(f"4. parametric solver within 0.1% of enumeration on 1000/1000 instances in {elapsed:.2f}s")


def test_05_target_exposure_matches_grid_oracle():
    rng = np.random.default_rng(20240817)
    worst = 0.0
    for _ in range(100):
        mu = rng.normal(0.0, 1.0, 2)
        lam = float(rng.uniform(0.05, 1.0))
        k = float(rng.uniform(1.0, 25.0))
        g0 = float(rng.uniform(0.2, 2.0))
        merit = rng.uniform(0.1, 1.0, 2)
        catalog = ProviderCatalog({"i0": "p0", "i1": "p1"}, merit={"p0": merit[0], "p1": merit[1]})
        shares = catalog.merit_shares()
        fz = FuzzyParams(lam, k, g0)

        def objective(rows):
            y = rows / shares
            var = y.var(axis=-1, ddof=1)
            member = np.array([fairness_membership(v, fz) for v in np.atleast_1d(var)])
            return lam * member + rows @ mu

        e = target_exposure(mu, lam, fz, catalog, seed=7)
        t = np.linspace(0.0, 1.0, 10_001)
        grid = np.stack([t, 1.0 - t], axis=1)
        gap = float(objective(grid).max() - objective(np.asarray(e)[None, :])[0])
        worst = max(worst, gap)
        assert gap <= 1e-4, gap

    for P in (2, 3, 6):
        merit = rng.uniform(0.2, 3.0, P)
        catalog = ProviderCatalog(
            {f"i{j}": f"p{j}" for j in range(P)},
            merit={f"p{j}": merit[j] for j in range(P)},
        )
        e = np.asarray(target_exposure(np.zeros(P), 0.7, FuzzyParams(0.7, 10.0, 1.0), catalog))
        y = e / catalog.merit_shares()
        assert float(y.var(ddof=1)) < 1e-10
    _ok(f"5. target exposure within 1e-4 of 10k-point grid (worst gap {worst:.2e}); "
        "zero prices give merit-proportional exposure")


def test_06_fairness_accuracy_tradeoff(reference_sessions):
    base, t_base = reference_sessions[(0.0, 1.0)]
    fair, t_fair = reference_sessions[(0.9, 1.0)]
    assert fair.metrics["gini"] < base.metrics["gini"]
    assert fair.metrics["esp"] > base.metrics["esp"]
    assert fair.metrics["ndcg_mean"] <= base.metrics["ndcg_mean"]
    assert t_base < 60.0 and t_fair < 60.0
    _ok("6. raising lam 0->0.9: gini "
        f"{base.metrics['gini']:.3f}->{fair.metrics['gini']:.3f}, esp "
        f"{base.metrics['esp']:.2f}->{fair.metrics['esp']:.2f}, ndcg "
        f"{base.metrics['ndcg_mean']:.3f}->{fair.metrics['ndcg_mean']:.3f}; "
        f"sessions {t_base:.1f}s/{t_fair:.1f}s < 60s")


def test_07_steeper_regret_evens_out_users(reference_dataset, reference_sessions):
    mild, _ = reference_sessions[(0.7, 0.1)]
    steep, _ = reference_sessions[(0.7, 5.0)]
    assert steep.metrics["mmr"] >= mild.metrics["mmr"]
    assert steep.metrics["var"] <= mild.metrics["var"]

    linear = run_session(
        reference_dataset, RunConfig(K=10, N=8, lam=0.7, delta=5.0, seed=42), "bankfair_linear"
    )
    assert steep.metrics["mmr"] > linear.metrics["mmr"]
    _ok("7. delta 0.1->5 at lam=0.7: mmr "
        f"{mild.metrics['mmr']:.3f}->{steep.metrics['mmr']:.3f}, var "
        f"{mild.metrics['var']:.4f}->{steep.metrics['var']:.4f}; regret beats "
        f"linear on mmr ({steep.metrics['mmr']:.3f} > {linear.metrics['mmr']:.3f})")


def test_08_metric_oracles():
    rng = np.random.default_rng(20240817)
    pw = lambda pos: 1.0 / math.log2(pos + 1)

    for case in range(1000):
        n_items = int(rng.integers(2, 7))
        K = int(rng.integers(1, n_items + 1))
        scores = rng.random(n_items)
        store = make_store(scores[None, :])
        items = [f"i{j}" for j in range(n_items)]
        picked = tuple(rng.permutation(items)[:K])
        slate = Slate("u0", picked, K)

        naive_dcg = sum(scores[items.index(it)] * pw(r + 1) for r, it in enumerate(picked))
        assert abs(dcg(slate, store, K) - naive_dcg) < 1e-12
        naive_ideal = max(
            sum(scores[items.index(it)] * pw(r + 1) for r, it in enumerate(perm))
            for perm in itertools.permutations(items, K)
        )
        assert abs(ideal_dcg("u0", store, K) - naive_ideal) < 1e-12
        value = ndcg(slate, store, K)
        assert 0.0 <= value <= 1.0
        assert abs(value - min(naive_dcg / naive_ideal, 1.0)) < 1e-12

        # Gini against the explicit pairwise formula, plus scale invariance.
        P = int(rng.integers(2, 6))
        providers = [f"p{j}" for j in range(P)]
        catalog = ProviderCatalog(
            {f"x{j}": providers[j] for j in range(P)},
            merit={p: float(rng.uniform(0.2, 2.0)) for p in providers},
        )
        exposure = rng.uniform(0.05, 2.0, P)
        scale = float(rng.uniform(0.1, 50.0))
        led = ExposureLedger(providers)
        led_scaled = ExposureLedger(providers)
        led.add(np.arange(P), exposure, 1)
        led_scaled.add(np.arange(P), exposure * scale, 1)
        y = exposure / np.array([catalog.merit[p] for p in providers])
        naive_gini = sum(abs(a - b) for a in y for b in y) / (2.0 * P * y.sum())
        assert abs(gini(led, catalog) - naive_gini) < 1e-12
        assert abs(gini(led_scaled, catalog) - gini(led, catalog)) < 1e-12

        floors = {p: float(rng.uniform(0.0, 2.0)) for p in providers}
        naive_esp = sum(1 for j, p in enumerate(providers) if exposure[j] >= floors[p]) / P
        assert abs(esp(led, floors) - naive_esp) < 1e-12

        # Per-user accuracy spread against the explicit pair sums.
        n_users = int(rng.integers(2, 8))
        vals = rng.random(n_users)
        report = QualityReport(
            per_user_dcg={f"u{j}": float(v) for j, v in enumerate(vals)},
            per_user_ideal={f"u{j}": 1.0 for j in range(n_users)},
            per_user_ndcg={f"u{j}": float(v) for j, v in enumerate(vals)},
        )
        naive_var = sum(
            (vals[a] - vals[b]) ** 2
            for a in range(n_users)
            for b in range(a + 1, n_users)
        ) / (n_users * n_users)
        assert abs(var_accuracy(report) - naive_var) < 1e-12
        assert abs(mmr(report) - vals.min() / vals.max()) < 1e-12

    # Uniform accuracy is the unique zero of var and the unique one of mmr.
    flat = QualityReport(
        per_user_dcg={"a": 0.3, "b": 0.3, "c": 0.3},
        per_user_ideal={"a": 1.0, "b": 1.0, "c": 1.0},
        per_user_ndcg={"a": 0.3, "b": 0.3, "c": 0.3},
    )
    assert var_accuracy(flat) == 0.0 and mmr(flat) == 1.0
    bumpy = QualityReport(
        per_user_dcg={"a": 0.3, "b": 0.4},
        per_user_ideal={"a": 1.0, "b": 1.0},
        per_user_ndcg={"a": 0.3, "b": 0.4},
    )
    assert var_accuracy(bumpy) > 0.0 and mmr(bumpy) < 1.0
    _ok("8. metric oracles agree at 1e-12 on 1000 random cases; gini is "
        "scale-invariant; var=0 iff mmr=1; ndcg stays in [0, 1]")


def test_09_same_seed_logs_are_byte_identical(reference_dataset, tmp_path):
    cfg = RunConfig(K=10, N=8, lam=0.9, delta=1.0, seed=42)
    paths = []
    for run in range(2):
        log = run_session(reference_dataset, cfg, "bankfair_plus")
        path = tmp_path / f"run{run}.jsonl"
        write_session_log(log, path)
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    _ok("9. two same-seed sessions serialize to byte-identical logs")


def test_10_fifty_thousand_decisions_under_a_minute():
    spec = SyntheticSpec(
        users=50_000, items=200, providers=50, traffic_pattern="constant", seed=7
    )
    ds = generate_dataset(spec, intervals=8)
    cfg = RunConfig(K=10, N=8, lam=0.5, delta=1.0, seed=7)
    t0 = time.perf_counter()
    log = run_session(ds, cfg, "bankfair_plus")
    elapsed = time.perf_counter() - t0
    assert len(log.decisions) == 50_000
    assert elapsed < 60.0, f"50k-decision session took {elapsed:.1f}s"
    _ok(f"10. 50,000 decisions across 50 providers in {elapsed:.1f}s < 60s")
