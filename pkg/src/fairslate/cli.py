"""Command-line harness.

Subcommands: generate, simulate, sweep, allocate, metrics.  Global flags
(--config/--seed/--out/--jobs) come before the subcommand.  Config files are
flat ``key = value`` text using the RunConfig field names (the trade-off
weight is spelled ``lambda``); command-line flags override file values.

Exit codes: 0 success, 2 input validation or parse failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import functools
import sys
from dataclasses import dataclass
from pathlib import Path

from .allocation import FairnessSpec, TrafficStats, build_demand, forecast_traffic, plan_interval, write_plan_csv
from .domain import (
    Dataset,
    ParseError,
    RunConfig,
    Slate,
    ValidationError,
    load_arrivals,
    load_catalog,
    load_scores,
    validate_dataset,
)
from .metrics import write_metrics_csv
from .seeding import substream
from .session import (
    POLICIES,
    compute_session_metrics,
    read_session_log,
    run_session,
    write_dual_csv,
    write_session_log,
)
from .synth import SCORE_DISTRIBUTIONS, TRAFFIC_PATTERNS, SyntheticSpec, generate_dataset, write_dataset

__all__ = ["main", "SweepGrid", "parse_config_file"]


@dataclass(frozen=True)
class SweepGrid:
    """Cartesian (lambda, delta) grid with per-point repetitions."""

    lambdas: tuple[float, ...]
    deltas: tuple[float, ...]
    repetitions: int = 1

    def __post_init__(self):
        if not self.lambdas or not self.deltas:
            raise ValidationError("sweep grid must contain at least one point")
        if any(not (0.0 <= l <= 1.0) for l in self.lambdas):
            raise ValidationError("lambda values must lie in [0, 1]")
        if any(not (d > 0.0) for d in self.deltas):
            raise ValidationError("delta values must be > 0")
        if self.repetitions < 1:
            raise ValidationError("repetitions must be >= 1")

    def points(self) -> list[tuple[float, float, int]]:
        return [
            (lam, delta, rep)
            for lam in self.lambdas
            for delta in self.deltas
            for rep in range(self.repetitions)
        ]


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat key = value lines; # or ; start a comment."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].split(";", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected key = value", line=ln)
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _config_overrides(args: argparse.Namespace) -> dict[str, object]:
    keys = [
        ("K", "K"), ("N", "N"), ("lam", "lambda"), ("delta", "delta"),
        ("alpha_risk", "alpha_risk"), ("alpha_demand", "alpha_demand"),
        ("beta_min", "beta_min"), ("eta", "eta"), ("k_steep", "k_steep"),
        ("g0", "g0"), ("forecast_method", "forecast_method"),
    ]
    out: dict[str, object] = {}
    for attr, key in keys:
        val = getattr(args, attr, None)
        if val is not None:
            out[key] = val
    return out


def _build_config(args: argparse.Namespace, defaults: dict[str, object] | None = None) -> RunConfig:
    mapping: dict[str, object] = dict(defaults or {})
    if args.config:
        mapping.update(parse_config_file(args.config))
    mapping.update(_config_overrides(args))
    if args.seed is not None:
        mapping["seed"] = args.seed
    return RunConfig.from_mapping(mapping)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--K", type=int, help="slate size")
    p.add_argument("--N", type=int, help="interval count")
    p.add_argument("--lambda", dest="lam", type=float, help="fairness weight in [0, 1]")
    p.add_argument("--delta", type=float, help="regret steepness")
    p.add_argument("--alpha-risk", dest="alpha_risk", type=float)
    p.add_argument("--alpha-demand", dest="alpha_demand", type=float)
    p.add_argument("--beta-min", dest="beta_min", type=float)
    p.add_argument("--eta", type=float, help="dual step size")
    p.add_argument("--k-steep", dest="k_steep", type=float)
    p.add_argument("--g0", type=float)
    p.add_argument("--forecast-method", dest="forecast_method",
                   choices=["mean", "seasonal", "last"])


def _add_dataset_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path,
                   help="directory holding scores.csv, catalog.csv, arrivals.csv")
    p.add_argument("--scores", type=Path)
    p.add_argument("--catalog", type=Path)
    p.add_argument("--arrivals", type=Path)


def _dataset_paths(args: argparse.Namespace) -> tuple[Path, Path, Path]:
    base = args.data
    scores = args.scores or (base / "scores.csv" if base else None)
    catalog = args.catalog or (base / "catalog.csv" if base else None)
    arrivals = args.arrivals or (base / "arrivals.csv" if base else None)
    missing = [n for n, v in (("scores", scores), ("catalog", catalog), ("arrivals", arrivals)) if v is None]
    if missing:
        raise ValidationError(f"missing dataset inputs: {', '.join(missing)} "
                              "(pass --data DIR or the individual flags)")
    return scores, catalog, arrivals


@functools.lru_cache(maxsize=4)
def _load_dataset(scores: str, catalog: str, arrivals: str) -> Dataset:
    return Dataset(
        store=load_scores(scores),
        catalog=load_catalog(catalog),
        schedule=load_arrivals(arrivals),
    )


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args: argparse.Namespace) -> int:
    config = _build_config(args)
    spec = SyntheticSpec(
        users=args.users,
        items=args.items,
        providers=args.providers,
        score_distribution=args.score_distribution,
        provider_size_skew=args.provider_size_skew,
        traffic_pattern=args.traffic_pattern,
        seed=config.seed,
    )
    dataset = generate_dataset(spec, intervals=config.N)
    paths = write_dataset(dataset, _out_dir(args))
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def _simulate_config(args: argparse.Namespace, dataset: Dataset) -> RunConfig:
    # The arrivals file fixes the horizon unless N is set explicitly.
    return _build_config(args, defaults={"N": dataset.schedule.interval_count})


def cmd_simulate(args: argparse.Namespace) -> int:
    scores, catalog, arrivals = _dataset_paths(args)
    dataset = _load_dataset(str(scores), str(catalog), str(arrivals))
    config = _simulate_config(args, dataset)
    log = run_session(dataset, config, policy=args.policy,
                      record_dual=args.dual_out is not None)
    out = _out_dir(args)
    log_path = out / "log.jsonl"
    metrics_path = out / "metrics.csv"
    write_session_log(log, log_path)
    write_metrics_csv(log.metrics, config.K, metrics_path)
    if args.dual_out is not None:
        write_dual_csv(log.dual_trace or [], dataset.catalog.providers, args.dual_out)
    for name in sorted(log.metrics):
        print(f"{name}={log.metrics[name]!r}")
    print(f"log: {log_path}")
    print(f"metrics: {metrics_path}")
    return 0


def _sweep_point(task: tuple) -> tuple[float, float, int, dict[str, float]]:
    (scores, catalog, arrivals, base_mapping, lam, delta, rep, policy, base_seed) = task
    dataset = _load_dataset(scores, catalog, arrivals)
    rep_seed = int(substream(base_seed, "sweep", lam, delta, rep).integers(2**63))
    mapping = dict(base_mapping)
    mapping.update({"lambda": lam, "delta": delta, "seed": rep_seed})
    config = RunConfig.from_mapping(mapping)
    log = run_session(dataset, config, policy=policy)
    return lam, delta, rep, log.metrics


def cmd_sweep(args: argparse.Namespace) -> int:
    scores, catalog, arrivals = _dataset_paths(args)
    dataset = _load_dataset(str(scores), str(catalog), str(arrivals))
    config = _simulate_config(args, dataset)
    grid = SweepGrid(
        lambdas=tuple(float(x) for x in args.lambdas.split(",") if x != ""),
        deltas=tuple(float(x) for x in args.deltas.split(",") if x != ""),
        repetitions=args.reps,
    )
    base_mapping = config.to_mapping()
    tasks = [
        (str(scores), str(catalog), str(arrivals), base_mapping,
         lam, delta, rep, args.policy, config.seed)
        for lam, delta, rep in grid.points()
    ]
    jobs = max(1, args.jobs)
    if jobs == 1:
        results = [_sweep_point(t) for t in tasks]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_point, tasks))
    results.sort(key=lambda r: (r[0], r[1], r[2]))
    out = _out_dir(args)
    frontier = out / "frontier.csv"
    with open(frontier, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lambda", "delta", "ndcg_mean", "esp", "gini", "mmr", "var"])
        for lam, delta, _rep, m in results:
            w.writerow([
                repr(float(lam)), repr(float(delta)),
                repr(m["ndcg_mean"]), repr(m["esp"]), repr(m["gini"]),
                repr(m["mmr"]), repr(m["var"]),
            ])
    print(f"frontier: {frontier} ({len(results)} rows)")
    return 0


def cmd_allocate(args: argparse.Namespace) -> int:
    _, catalog_path, arrivals_path = _dataset_paths_allocate(args)
    catalog = load_catalog(catalog_path)
    schedule = load_arrivals(arrivals_path)
    config = _build_config(args, defaults={"N": schedule.interval_count})
    if config.N != schedule.interval_count:
        raise ValidationError(
            f"config N={config.N} but the schedule has {schedule.interval_count} intervals"
        )
    spec = FairnessSpec.merit_proportional(
        catalog, schedule.total, config.K, config.beta_min, config.N
    )
    stats = TrafficStats()
    fc = forecast_traffic(
        stats, config.forecast_method, upcoming=config.N,
        prior=schedule.total / config.N,
    )
    demands = build_demand(fc, config.K, config.alpha_demand, catalog,
                           weighting="merit", start_interval=1)
    plan = plan_interval(1, dict(spec.min_total), demands)
    out = _out_dir(args)
    path = out / "plan.csv"
    write_plan_csv(plan, path)
    print(f"plan: {path}")
    return 0


def _dataset_paths_allocate(args: argparse.Namespace) -> tuple[None, Path, Path]:
    base = args.data
    catalog = args.catalog or (base / "catalog.csv" if base else None)
    arrivals = args.arrivals or (base / "arrivals.csv" if base else None)
    missing = [n for n, v in (("catalog", catalog), ("arrivals", arrivals)) if v is None]
    if missing:
        raise ValidationError(f"missing dataset inputs: {', '.join(missing)}")
    return None, catalog, arrivals


def cmd_metrics(args: argparse.Namespace) -> int:
    scores, catalog_path, arrivals_path = _dataset_paths(args)
    dataset = _load_dataset(str(scores), str(catalog_path), str(arrivals_path))
    records, summary = read_session_log(args.log)
    if not records:
        raise ValidationError("log contains no decisions")
    config = _build_config(args, defaults={
        "N": dataset.schedule.interval_count,
        "K": summary.get("K", len(records[0]["items"])),
    })
    store, catalog, schedule = dataset.store, dataset.catalog, dataset.schedule
    slates: list[Slate] = []
    intervals: list[int] = []
    for ln, rec in enumerate(records, start=1):
        user = str(rec["user_id"])
        if user not in store.user_index:
            raise ValidationError(f"line {ln}: unknown user {user!r}")
        items = [str(i) for i in rec["items"]]
        for item in items:
            if item not in catalog.owner:
                raise ValidationError(f"line {ln}: unknown item {item!r}")
        if len(items) != config.K:
            raise ValidationError(f"line {ln}: slate size {len(items)} != K={config.K}")
        slates.append(Slate.of(user, items))
        intervals.append(int(rec["interval"]))
    spec = FairnessSpec.merit_proportional(
        catalog, schedule.total, config.K, config.beta_min, schedule.interval_count
    )
    _, _, metric_values = compute_session_metrics(
        slates, intervals, store, catalog, config.K, spec.min_total
    )
    out = _out_dir(args)
    path = out / "metrics.csv"
    write_metrics_csv(metric_values, config.K, path)
    for name in sorted(metric_values):
        print(f"{name}={metric_values[name]!r}")
    print(f"metrics: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairslate",
        description="Two-sided fair re-ranking: simulate, sweep and score sessions.",
    )
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", type=Path, help="output directory (default .)")
    parser.add_argument("--jobs", type=int, default=1, help="sweep worker count")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset")
    g.add_argument("--users", type=int, required=True)
    g.add_argument("--items", type=int, required=True)
    g.add_argument("--providers", type=int, required=True)
    g.add_argument("--score-distribution", choices=list(SCORE_DISTRIBUTIONS),
                   default="beta-skewed")
    g.add_argument("--provider-size-skew", type=float, default=1.0)
    g.add_argument("--traffic-pattern", choices=list(TRAFFIC_PATTERNS),
                   default="sinusoidal")
    _add_config_flags(g)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("simulate", help="replay a schedule under one policy")
    _add_dataset_flags(s)
    s.add_argument("--policy", choices=list(POLICIES), default="bankfair_plus")
    s.add_argument("--dual-out", type=Path, help="also write the dual price trajectory CSV")
    _add_config_flags(s)
    s.set_defaults(func=cmd_simulate)

    w = sub.add_parser("sweep", help="run a lambda/delta grid and emit the frontier")
    _add_dataset_flags(w)
    w.add_argument("--policy", choices=list(POLICIES), default="bankfair_plus")
    w.add_argument("--lambdas", required=True, help="comma-separated lambda values")
    w.add_argument("--deltas", required=True, help="comma-separated delta values")
    w.add_argument("--reps", type=int, default=1)
    _add_config_flags(w)
    w.set_defaults(func=cmd_sweep)

    a = sub.add_parser("allocate", help="plan interval exposure targets only")
    _add_dataset_flags(a)
    _add_config_flags(a)
    a.set_defaults(func=cmd_allocate)

    m = sub.add_parser("metrics", help="recompute the metric suite from a log")
    _add_dataset_flags(m)
    m.add_argument("--log", type=Path, required=True)
    _add_config_flags(m)
    m.set_defaults(func=cmd_metrics)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
