"""Command-line entry points.

Exit codes: 0 feasible solution, 2 infeasible (or oracle refusal), 1 usage
or runtime error.  All randomness comes from explicit ``--seed`` flags.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

from . import bruteforce, dual, experiments, scenarios
from .charging import Objective
from .errors import GreenhaulError, OracleSizeError
from .network import load_instance, save_instance, validate_instance
from .plan import CSV_COLUMNS, evaluate, save_plan

ITER_COLUMNS = (
    "k",
    "dual_value",
    "max_residual",
    "best_feasible_objective",
    "gap_bound",
    "boundary_adjust",
)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    if not hasattr(args, "func"):
        parser.print_usage()
        return 1
    try:
        return args.func(args)
    except OracleSizeError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 2
    except GreenhaulError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="greenhaul",
        description="Carbon-aware trip planning for battery-electric trucks",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("solve", help="solve one instance file")
    p.add_argument("--instance", required=True)
    p.add_argument("--objective", choices=[m.value for m in Objective], default=None)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=None, help="override reserve ratio")
    p.add_argument("--deadline-factor", type=float, default=None)
    p.add_argument("--out", default=None, help="write the plan here (JSON)")
    p.add_argument("--log", default=None, help="stream the iteration log here (CSV)")
    p.add_argument("--strict-soc", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="brute-force a small instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--objective", choices=[m.value for m in Objective], default=None)
    p.add_argument("--time-points", type=int, default=5)
    p.add_argument("--charge-points", type=int, default=7)
    p.add_argument("--wait-points", type=int, default=3)
    p.add_argument("--max-path-len", type=int, default=6)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gen", help="generate a synthetic instance")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--topology", choices=["line", "grid", "random-planar"], default="line")
    p.add_argument("--nodes", type=int, default=6)
    p.add_argument("--station-density", type=float, default=0.4)
    p.add_argument(
        "--intensity",
        choices=["constant", "diurnal", "two_region"],
        default="constant",
    )
    p.add_argument("--preset", choices=sorted(scenarios.PRESETS), default="compact")
    p.add_argument("--stops", type=int, default=2)
    p.add_argument("--delay-factor", type=float, default=1.2)
    p.add_argument("--regen-heavy", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("sweep-alpha", help="reserve-ratio sweep over instance files")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--alphas", type=float, nargs="+", required=True)
    p.add_argument("--iters", type=int, default=150)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_alpha)

    p = sub.add_parser("sweep-deadline", help="delay-factor sweep over instance files")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--factors", type=float, nargs="+", required=True)
    p.add_argument("--iters", type=int, default=150)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_deadline)

    p = sub.add_parser("validate", help="validate an instance file")
    p.add_argument("--instance", required=True)
    p.set_defaults(func=cmd_validate)
    return parser


def _load_with_overrides(args):
    instance = load_instance(args.instance)
    if getattr(args, "objective", None):
        instance = instance.with_objective(Objective(args.objective))
    if getattr(args, "alpha", None) is not None:
        instance = replace(
            instance,
            reserve_ratio=args.alpha,
            initial_soc=max(instance.initial_soc, args.alpha * instance.capacity),
        )
    if getattr(args, "deadline_factor", None) is not None:
        instance = scenarios.deadline_from_factor(instance, args.deadline_factor)
    return instance


def cmd_solve(args) -> int:
    instance = _load_with_overrides(args)
    log_fh = open(args.log, "w", newline="") if args.log else None
    writer = None
    if log_fh is not None:
        writer = csv.DictWriter(log_fh, fieldnames=list(ITER_COLUMNS))
        writer.writeheader()

    def on_iteration(row):
        if writer is not None:
            writer.writerow(
                {
                    "k": row.k,
                    "dual_value": row.dual_value,
                    "max_residual": row.max_residual,
                    "best_feasible_objective": row.best_feasible_objective,
                    "gap_bound": row.gap_bound,
                    "boundary_adjust": row.boundary_adjust,
                }
            )
            log_fh.flush()

    try:
        report = dual.run(
            instance, iters=args.iters, eps1=args.eps, on_iteration=on_iteration
        )
    finally:
        if log_fh is not None:
            log_fh.close()

    if report.plan is None:
        print(f"infeasible: no plan found ({report.termination})")
        return 2
    summary = evaluate(instance=instance, plan=report.plan, strict_soc=args.strict_soc)
    if args.out:
        save_plan(report.plan, args.out)
    gap = "n/a" if report.gap_bound is None else f"{report.gap_bound:.6g}"
    print(
        f"termination={report.termination} objective={summary.objective:.6g} "
        f"carbon_kg={summary.carbon_kg:.6g} time_h={summary.time_h:.6g} "
        f"dual_bound={report.dual_bound:.6g} gap_bound={gap}"
    )
    _print_summary_row(summary)
    return 0 if summary.feasible else 2


def _print_summary_row(summary) -> None:
    row = summary.csv_row()
    print(",".join(CSV_COLUMNS))
    print(",".join(str(row[c]) for c in CSV_COLUMNS))


def cmd_oracle(args) -> int:
    instance = _load_with_overrides(args)
    config = bruteforce.OracleConfig(
        time_points=args.time_points,
        charge_points=args.charge_points,
        wait_points=args.wait_points,
        max_path_len=args.max_path_len,
    )
    result = bruteforce.enumerate_optimal(instance, config)
    if not result.feasible:
        print("infeasible: no grid plan satisfies the constraints")
        return 2
    if args.out:
        save_plan(result.plan, args.out)
    print(
        f"objective={result.objective:.9g} error_bound={result.error_bound:.3g} "
        f"routes={result.decompositions} states={result.states}"
    )
    _print_summary_row(evaluate(result.plan, instance))
    return 0


def cmd_gen(args) -> int:
    spec = scenarios.ScenarioSpec(
        seed=args.seed,
        topology=args.topology,
        n_nodes=args.nodes,
        station_density=args.station_density,
        intensity_family=args.intensity,
        preset=args.preset,
        max_stops=args.stops,
        delay_factor=args.delay_factor,
        regen_heavy=args.regen_heavy,
    )
    instance = scenarios.generate(spec)
    save_instance(instance, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_sweep_alpha(args) -> int:
    instances = [load_instance(path) for path in sorted(args.instances)]
    rows = experiments.sweep_alpha(instances, args.alphas, iters=args.iters, eps1=args.eps)
    experiments.write_csv(rows, experiments.ALPHA_COLUMNS, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def cmd_sweep_deadline(args) -> int:
    instances = [load_instance(path) for path in sorted(args.instances)]
    rows = experiments.sweep_deadline(instances, args.factors, iters=args.iters, eps1=args.eps)
    experiments.write_csv(rows, experiments.DEADLINE_COLUMNS, args.out)
    print(f"wrote {args.out} ({len(rows)} rows)")
    return 0


def cmd_validate(args) -> int:
    instance = load_instance(args.instance)
    report = validate_instance(instance)
    if report.passed:
        print("pass")
        return 0
    for v in report.violations:
        print(f"violation: {v}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
