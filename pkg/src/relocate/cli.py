"""Command-line front end: ``relocate gen | solve | validate | bench``.

Exit codes: 0 success, 1 validation findings, 2 generation failed,
3 infeasible, 4 limit reached without a schedule, 64 usage error,
65 malformed input.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Sequence

from .generator import GenerationFailed, GenParams, generate
from .instance import InstanceFormatError, read_instance, validate_instance, write_instance
from .liftflow import HeuristicFailed, ModelDegenerate, solve_liftflow
from .mip import SolveLimits, Status, available_backends
from .schedule import ScheduleFormatError, read_schedule, validate_schedule, write_schedule
from .ten import InvalidHorizon, solve_exact

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_GENERATION = 2
EXIT_INFEASIBLE = 3
EXIT_LIMIT = 4
EXIT_USAGE = 64
EXIT_DATA = 65


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _gap(upper: float | None, lower: float | None) -> float | None:
    """``(upper - lower) / upper`` in percent."""
    if upper is None or lower is None:
        return None
    if upper == 0:
        return 0.0 if lower <= 0 else None
    return (upper - lower) / upper * 100.0


def _limits(seconds: float | None) -> SolveLimits:
    return SolveLimits(time_limit=math.inf if seconds is None else float(seconds))


def _load_instance(path: str):
    instance = read_instance(path)
    report = validate_instance(instance)
    if report.errors:
        raise InstanceFormatError("; ".join(v.message for v in report.errors))
    return instance


# --------------------------------------------------------------------------
# gen
# --------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace) -> int:
    params = GenParams(
        n_stations=args.stations, n_overfull=args.over, n_underfull=args.under,
        T=args.T, L=args.L, k=args.k, plane_size=args.plane_size,
        surplus_range=(args.surplus_min, args.surplus_max),
        base_range=(args.base_min, args.base_max),
        capacity_range=None if args.capacity_min is None else (args.capacity_min, args.capacity_max),
        neighbors=args.neighbors, seed=args.seed, name=args.name or "")
    try:
        instance = generate(params)
    except GenerationFailed as exc:
        print(f"generation failed: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    write_instance(instance, args.out)
    print(f"wrote {args.out}: {instance.n} stations, {int((instance.surplus > 0).sum())} overfull, "
          f"{int((instance.surplus < 0).sum())} underfull")
    return EXIT_OK


# --------------------------------------------------------------------------
# solve
# --------------------------------------------------------------------------

def _run_exact(instance, limits, backend, start=None) -> tuple[int, dict, Any]:
    res = solve_exact(instance, limits, backend=backend, start=start)
    sol = res.solution
    report = {"status": sol.status.value, "objective": res.total_length,
              "bound": None if sol.bound is None else math.ceil(sol.bound - 1e-6),
              "nodes": sol.nodes, "runtime": round(sol.runtime, 3)}
    if res.schedule is not None:
        report["per_tour_lengths"] = res.schedule.per_tour_lengths(instance)
        report["gap_percent"] = _gap(res.total_length, report["bound"])
        return EXIT_OK, report, res.schedule
    return (EXIT_INFEASIBLE if sol.status is Status.INFEASIBLE else EXIT_LIMIT), report, None


def _run_liftflow(instance, limits, backend, split) -> tuple[int, dict, Any]:
    start = time.monotonic()
    try:
        res = solve_liftflow(instance, limits, backend=backend, split_overlong=split)
    except HeuristicFailed as exc:
        return EXIT_LIMIT, {"status": "failed", "message": str(exc)}, None
    report = res.report.to_dict()
    report["gap_percent"] = _gap(report["total_length"], report["lb"])
    report["runtime"] = round(time.monotonic() - start, 3)
    if split:
        report["split_drivers"] = res.split_drivers
    return EXIT_OK, report, res.schedule


def _schedule_path(out: Path, method: str, both: bool) -> Path:
    return out.with_name(f"{out.stem}.{method}{out.suffix}") if both else out


def cmd_solve(args: argparse.Namespace) -> int:
    try:
        instance = _load_instance(args.input)
    except (InstanceFormatError, OSError) as exc:
        print(f"cannot read instance: {exc}", file=sys.stderr)
        return EXIT_DATA
    limits = _limits(args.time_limit)
    methods = ["exact", "liftflow"] if args.method == "both" else [args.method]
    if args.warm_start:
        if args.method != "both":
            print("--warm-start needs --method both", file=sys.stderr)
            return EXIT_USAGE
        methods.reverse()
    start = None
    out = Path(args.out)
    reports: dict[str, Any] = {"instance": instance.name}
    codes = []
    for method in methods:
        try:
            if method == "exact":
                code, report, schedule = _run_exact(instance, limits, args.backend, start)
            else:
                code, report, schedule = _run_liftflow(instance, limits, args.backend, args.split_overlong)
                start = schedule if args.warm_start else None
        except (ModelDegenerate, InvalidHorizon) as exc:
            print(f"{method}: {exc}", file=sys.stderr)
            return EXIT_DATA
        if schedule is not None:
            path = _schedule_path(out, method, len(methods) > 1)
            write_schedule(schedule, path)
            report["schedule"] = str(path)
        reports[method] = report
        codes.append(code)
        print(f"{method}: {report.get('status', report.get('step1_status'))}, "
              f"length {report.get('objective', report.get('total_length'))}")

    if len(methods) > 1:
        ex = reports["exact"].get("objective")
        lf = reports["liftflow"].get("total_length")
        lb = reports["liftflow"].get("lb")
        reports["comparison"] = {"exact": ex, "liftflow": lf, "lb": lb,
                                 "gap_lf_lb_percent": _gap(lf, lb), "gap_exact_lb_percent": _gap(ex, lb)}
        print(f"comparison: exact {ex}, liftflow {lf}, lb {lb}")
    report_path = Path(args.report) if args.report else out.with_name(f"{out.stem}.report.json")
    report_path.write_text(json.dumps(reports, indent=2) + "\n", encoding="utf-8")
    return next((c for c in codes if c != EXIT_OK), EXIT_OK)


# --------------------------------------------------------------------------
# validate
# --------------------------------------------------------------------------

def cmd_validate(args: argparse.Namespace) -> int:
    try:
        instance = _load_instance(args.input)
        schedule = read_schedule(args.schedule)
    except (InstanceFormatError, ScheduleFormatError, OSError) as exc:
        print(f"cannot read input: {exc}", file=sys.stderr)
        return EXIT_DATA
    report = validate_schedule(schedule, instance, check_horizon=args.strict_horizon)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK if len(report) == 0 else EXIT_FINDINGS


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------

@dataclass
class BenchRow:
    name: str
    stations: int
    overfull: int
    underfull: int
    T: int
    L: int
    k: int
    lf: int | None = None
    lb: int | None = None
    lb_optimal: bool = False
    gap_percent: float | None = None
    exact: int | None = None
    exact_status: str = ""
    exact_gap_percent: float | None = None
    lf_seconds: float | None = None
    exact_seconds: float | None = None
    horizon_violation: bool = False
    error: str = ""


@dataclass(frozen=True)
class BenchConfig:
    liftflow_time_limit: float | None = 60.0
    exact_time_limit: float | None = 60.0
    run_exact: bool = True
    backend: str = "internal"
    warm_start: bool = False


def bench_row(params: GenParams, config: BenchConfig) -> BenchRow:
    row = BenchRow(params.name or f"seed{params.seed}", params.n_stations, params.n_overfull,
                   params.n_underfull, params.T, params.L, params.k)
    try:
        instance = generate(params)
        row.name = instance.name
        start = time.monotonic()
        lf = solve_liftflow(instance, _limits(config.liftflow_time_limit), backend=config.backend)
        row.lf_seconds = round(time.monotonic() - start, 3)
        row.lf = lf.report.total_length
        row.lb = lf.lower_bound
        row.lb_optimal = lf.report.step1_status == Status.OPTIMAL.value
        row.gap_percent = _gap(row.lf, row.lb)
        row.horizon_violation = bool(lf.report.horizon_violations)
        if config.run_exact:
            start = time.monotonic()
            ex = solve_exact(instance, _limits(config.exact_time_limit), backend=config.backend,
                             start=lf.schedule if config.warm_start else None)
            row.exact_seconds = round(time.monotonic() - start, 3)
            row.exact_status = ex.solution.status.value
            row.exact = ex.total_length
            row.exact_gap_percent = _gap(row.exact, row.lb)
    except Exception as exc:  # a failing row is recorded, never fatal
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def read_suite(path: str | Path) -> tuple[list[GenParams], BenchConfig]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    config = BenchConfig(**data.get("limits", {}))
    params = [GenParams.from_dict(p) for p in data["instances"]]
    return params, config


def run_suite(params: Sequence[GenParams], config: BenchConfig, workers: int = 1) -> list[BenchRow]:
    if workers <= 1 or len(params) <= 1:
        return [bench_row(p, config) for p in params]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(bench_row, params, [config] * len(params)))


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.1f}"
    return str(value)


def average_gaps(rows: Sequence[BenchRow]) -> tuple[float | None, float | None]:
    def mean(values):
        values = [v for v in values if v is not None and math.isfinite(v)]
        return sum(values) / len(values) if values else None
    return mean(r.gap_percent for r in rows), mean(r.exact_gap_percent for r in rows)


def format_table(rows: Sequence[BenchRow]) -> str:
    header = ["instance", "stations", "+/-", "T", "L", "k", "LF", "LB", "GAP%", "ILP", "GAP%", "t_LF", "t_ILP"]
    body = []
    for r in rows:
        lf = "-" if r.lf is None else f"{r.lf}{'*' if r.horizon_violation else ''}"
        lb = "-" if r.lb is None else f"{r.lb}{'+' if r.lb_optimal else ''}"
        ilp = "-" if r.exact is None else f"{r.exact}{'+' if r.exact_status == Status.OPTIMAL.value else ''}"
        body.append([r.name, str(r.stations), f"{r.overfull}/{r.underfull}", str(r.T), str(r.L), str(r.k),
                     lf, lb, _fmt(r.gap_percent), ilp, _fmt(r.exact_gap_percent),
                     _fmt(r.lf_seconds), _fmt(r.exact_seconds)])
    lf_avg, ex_avg = average_gaps(rows)
    footer = ["average", "", "", "", "", "", "", "", _fmt(lf_avg), "", _fmt(ex_avg), "", ""]
    widths = [max(len(line[i]) for line in [header, *body, footer]) for i in range(len(header))]

    def line(cells):
        return "  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(cells, widths))).rstrip()

    rule = "-" * len(line(header))
    out = [line(header), rule, *map(line, body), rule, line(footer)]
    errors = [f"{r.name}: {r.error}" for r in rows if r.error]
    if errors:
        out += ["", "errors:", *errors]
    return "\n".join(out) + "\n"


CSV_FIELDS = [f.name for f in fields(BenchRow)]


def write_csv(rows: Sequence[BenchRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for r in rows:
            writer.writerow({k: ("" if v is None else v) for k, v in asdict(r).items()})
        lf_avg, ex_avg = average_gaps(rows)
        writer.writerow({"name": "average", "gap_percent": "" if lf_avg is None else lf_avg,
                         "exact_gap_percent": "" if ex_avg is None else ex_avg})


def read_csv(path: str | Path) -> list[BenchRow]:
    """Rows of a bench CSV (the average footer is skipped)."""
    types = {f.name: f.type for f in fields(BenchRow)}
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            if rec["name"] == "average" and not rec["stations"]:
                continue
            kw: dict[str, Any] = {}
            for key, raw in rec.items():
                kind = types[key]
                if raw == "":
                    kw[key] = "" if kind == "str" else None
                elif kind == "bool":
                    kw[key] = raw == "True"
                elif "int" in kind:
                    kw[key] = int(raw)
                elif "float" in kind:
                    kw[key] = float(raw)
                else:
                    kw[key] = raw
            rows.append(BenchRow(**kw))
    return rows


def bench_workers() -> int:
    try:
        return max(1, int(os.environ.get("RELOCATE_THREADS", "1")))
    except ValueError:
        return 1


def cmd_bench(args: argparse.Namespace) -> int:
    try:
        params, config = read_suite(args.suite)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"cannot read suite: {exc}", file=sys.stderr)
        return EXIT_DATA
    rows = run_suite(params, config, bench_workers())
    table = format_table(rows)
    out = Path(args.out)
    out.write_text(table, encoding="utf-8")
    write_csv(rows, out.with_suffix(".csv"))
    sys.stdout.write(table)
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relocate", description="Car relocation planning with convoy drivers.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a random instance")
    g.add_argument("--stations", type=int, required=True)
    g.add_argument("--over", type=int, required=True)
    g.add_argument("--under", type=int, required=True)
    g.add_argument("--T", type=int, required=True)
    g.add_argument("--L", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--plane-size", type=float, default=100.0)
    g.add_argument("--surplus-min", type=int, default=1)
    g.add_argument("--surplus-max", type=int, default=5)
    g.add_argument("--base-min", type=int, default=0)
    g.add_argument("--base-max", type=int, default=3)
    g.add_argument("--capacity-min", type=int)
    g.add_argument("--capacity-max", type=int)
    g.add_argument("--neighbors", type=int, default=3)
    g.add_argument("--name")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="solve an instance")
    s.add_argument("--method", choices=["exact", "liftflow", "both"], required=True)
    s.add_argument("--time-limit", type=float, default=None, help="seconds per solver call")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True, help="schedule JSON (with 'both': <stem>.exact / <stem>.liftflow)")
    s.add_argument("--report", help="report JSON (default: <out stem>.report.json)")
    s.add_argument("--backend", choices=available_backends(), default="internal")
    s.add_argument("--warm-start", action="store_true",
                   help="with 'both': run LiftFlow first and start the exact solver from its schedule")
    s.add_argument("--split-overlong", action="store_true",
                   help="hand overlong LiftFlow tours to idle drivers where possible")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("validate", help="check a schedule against an instance")
    v.add_argument("--in", dest="input", required=True)
    v.add_argument("--schedule", required=True)
    v.add_argument("--strict-horizon", action="store_true", help="also require every tour to end by T")
    v.set_defaults(func=cmd_validate)

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("--suite", required=True)
    b.add_argument("--out", required=True, help="text table; the CSV goes next to it")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "capacity_min", None) is not None and getattr(args, "capacity_max", None) is None:
        parser.error("--capacity-min needs --capacity-max")
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
