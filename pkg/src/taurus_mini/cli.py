"""Command line entry point: ``run``, ``avail`` and ``bench-cache``."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from pathlib import Path

from . import availability, cachebench
from .config import PROFILES
from .simnet.scenario import (
    GeneratorParams,
    RunResult,
    ScenarioParseError,
    bundled_scenarios,
    generate_workload,
    load_scenario,
    run_scenario,
)

SEED_ENV = "TAURUS_MINI_SEED"

# generator keys accepted on the command line, with a few friendly aliases
GEN_KEYS = {
    "pages": "pages",
    "slices": "slices",
    "writes": "writes",
    "reads": "reads",
    "dur": "duration_ms",
    "duration": "duration_ms",
    "duration_ms": "duration_ms",
    "faultrate": "fault_rate",
    "fault_rate": "fault_rate",
    "logstores": "logstores",
    "pagestores": "pagestores",
    "replicas": "replicas",
    "views": "views",
    "settle": "settle_ms",
    "settle_ms": "settle_ms",
    "longtermfraction": "long_term_fraction",
    "long_term_fraction": "long_term_fraction",
}


class UsageError(Exception):
    pass


def _duration_ms(text: str) -> float:
    text = text.strip().lower()
    for suffix, scale in (("ms", 1.0), ("min", 60_000.0), ("s", 1000.0), ("m", 60_000.0)):
        if text.endswith(suffix):
            return float(text[: -len(suffix)]) * scale
    return float(text)


def parse_gen_params(items: list[str]) -> GeneratorParams:
    values: dict = {}
    write_rate = None
    for item in items:
        if "=" not in item:
            raise UsageError(f"--gen expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        norm = key.strip().replace("-", "_").lower()
        if norm in ("writerate", "write_rate"):
            write_rate = float(raw)
            continue
        field_name = GEN_KEYS.get(norm) or GEN_KEYS.get(norm.replace("_", ""))
        if field_name is None:
            raise UsageError(f"unknown generator parameter {key!r}")
        if field_name in ("duration_ms", "settle_ms"):
            values[field_name] = _duration_ms(raw)
        elif field_name in ("fault_rate", "long_term_fraction"):
            values[field_name] = float(raw)
        else:
            values[field_name] = int(raw)
    params = GeneratorParams(**values)
    if write_rate is not None:
        params = GeneratorParams(**{**params.__dict__, "writes": int(write_rate * params.duration_ms / 1000.0)})
    return params


def resolve_seed(value: int | None, required: bool) -> int | None:
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    if required:
        raise UsageError(f"a seed is required: pass --seed or set {SEED_ENV}")
    return None


def resolve_scenario_path(name: str) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_scenarios()
    stem = path.stem if path.suffix == ".txt" else name
    if stem in bundled:
        return bundled[stem]
    raise UsageError(f"no scenario file {name!r} (bundled: {', '.join(sorted(bundled))})")


def metrics_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time_ms", "metric", "node", "value"])
    for time_ms, metric, node, value in result.metrics:
        w.writerow([f"{time_ms:.3f}", metric, node, value])
    return buf.getvalue()


def audit_report(result: RunResult) -> str:
    lines = [
        f"scenario {result.scenario}",
        f"seed {result.seed}",
        f"trace_sha256 {result.trace_hash}",
        f"reads_ok {result.reads_ok}",
        f"reads_unavailable {result.reads_unavailable}",
        f"oracle_mismatches {len(result.reads_mismatched)}",
        f"durability_audits {result.cluster.auditor.audits}",
        f"durability_violations {len(result.audit_violations)}",
    ]
    for c in result.checks:
        lines.append(f"check {c.name} {'pass' if c.ok else 'FAIL'} t={c.time:.3f} {c.detail}")
    lines += [f"violation {v}" for v in result.audit_violations]
    lines += [f"mismatch {m}" for m in result.reads_mismatched]
    lines.append("result " + ("PASS" if result.ok else "FAIL"))
    return "\n".join(lines) + "\n"


def cmd_run(args: argparse.Namespace) -> int:
    if bool(args.scenario) == bool(args.gen):
        raise UsageError("give exactly one of --scenario or --gen")
    profile = PROFILES[args.profile]()
    if args.gen:
        seed = resolve_seed(args.seed, required=True)
        scenario = generate_workload(seed, parse_gen_params(args.gen), profile)
    else:
        seed = resolve_seed(args.seed, required=False) or 0
        scenario = load_scenario(resolve_scenario_path(args.scenario))
    result = run_scenario(scenario, seed, config=profile)
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.txt").write_text("\n".join(result.trace) + ("\n" if result.trace else ""))
        (out / "metrics.csv").write_text(metrics_csv(result))
        (out / "report.txt").write_text(audit_report(result))
    for c in result.checks:
        print(f"CHECK {c.name}: {'pass' if c.ok else 'FAIL'} ({c.detail})")
    print(f"reads: {result.reads_ok} oracle-equal, {result.reads_unavailable} unavailable, {len(result.reads_mismatched)} mismatched")
    print(f"durability audits: {result.cluster.auditor.audits}, violations: {len(result.audit_violations)}")
    print(f"trace sha256: {result.trace_hash}")
    failure = result.first_failure()
    if failure:
        print(f"FAILED: {failure}", file=sys.stderr)
        return 1
    print("PASS")
    return 0


def _parse_xs(text: str) -> list[str]:
    xs = [x.strip() for x in text.split(",") if x.strip()]
    for x in xs:
        try:
            availability.as_probability(x)
        except ValueError:
            raise UsageError(f"x must be a probability in [0, 1], got {x!r}") from None
    if not xs:
        raise UsageError("--xs needs at least one value")
    return xs


def cmd_avail(args: argparse.Namespace) -> int:
    xs = _parse_xs(args.xs)
    cells = availability.availability_grid(xs, trials=args.trials, seed=args.seed)
    print(availability.render_table(cells, xs))
    print()
    print(availability.render_detail(cells))
    if args.csv:
        Path(args.csv).write_text(availability.render_csv(cells))
    return 0


def cmd_bench_cache(args: argparse.Namespace) -> int:
    workload = cachebench.CacheWorkload(
        pages=args.pages,
        pool_pages=args.pool_pages,
        reads=args.reads,
        distribution=args.distribution,
        skew=args.skew,
    )
    policies = cachebench.POLICIES if args.policy == "both" else (args.policy,)
    results = [cachebench.run_policy(p, workload, args.seed) for p in policies]
    print(cachebench.render(results, workload))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taurus-mini", description=__doc__, allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario script or a generated workload", allow_abbrev=False)
    run.add_argument("--scenario", help="script path or bundled scenario name")
    run.add_argument("--gen", nargs="+", metavar="KEY=VALUE", help="generator parameters, e.g. pages=64 dur=60s faultRate=0.1")
    run.add_argument("--seed", type=int, help=f"seed (falls back to ${SEED_ENV})")
    run.add_argument("--profile", choices=sorted(PROFILES), default="test-constants")
    run.add_argument("--out", help="directory for trace.txt, metrics.csv and report.txt")
    run.set_defaults(func=cmd_run)

    avail = sub.add_parser("avail", help="storage unavailability table", allow_abbrev=False)
    avail.add_argument("--xs", default=",".join(availability.REFERENCE_XS), help="comma-separated node failure probabilities")
    avail.add_argument("--trials", type=int, default=0, help="Monte Carlo trials per cell (0 = skip)")
    avail.add_argument("--seed", type=int, default=0)
    avail.add_argument("--csv", help="also write the grid as CSV to this path")
    avail.set_defaults(func=cmd_avail)

    bench = sub.add_parser("bench-cache", help="LFU vs LRU buffer pool hit rates", allow_abbrev=False)
    bench.add_argument("--policy", choices=("both", *cachebench.POLICIES), default="both")
    bench.add_argument("--pages", type=int, default=512)
    bench.add_argument("--pool-pages", type=int, default=32)
    bench.add_argument("--reads", type=int, default=20_000)
    bench.add_argument("--distribution", choices=("zipf", "uniform"), default="zipf")
    bench.add_argument("--skew", type=float, default=1.1)
    bench.add_argument("--seed", type=int, default=0)
    bench.set_defaults(func=cmd_bench_cache)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ScenarioParseError, KeyError) as err:
        parser.error(str(err.args[0]) if err.args else str(err))
    return 2


if __name__ == "__main__":
    sys.exit(main())
