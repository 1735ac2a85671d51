"""Experiment harnesses: baseline comparisons and parameter sweeps.

Baselines share one vocabulary: ``TIME`` is the fastest plan; ``TIME+S`` and
``TIME+SC`` re-optimize carbon on the fastest plan's route with speed only,
or speed plus charging; ``ENERGY`` and ``CARBON`` run the full solver under
those objectives.  Reductions are reported relative to the TIME baseline.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Iterable, Optional

from . import dual
from .charging import Objective
from .network import Instance
from .plan import Plan, evaluate


@dataclass(frozen=True)
class ModeOutcome:
    mode: str
    feasible: bool
    objective: float
    carbon_kg: float
    energy_kwh: float
    time_h: float
    gap_bound: Optional[float]


def solve_mode(
    instance: Instance,
    mode: Objective,
    iters: int = 150,
    eps1: float = 1e-3,
    **kwargs,
) -> tuple[Optional[Plan], dual.SolverReport]:
    inst = instance.with_objective(mode)
    report = dual.run(inst, iters=iters, eps1=eps1, **kwargs)
    return report.plan, report


def _route_of(plan: Plan, instance: Instance):
    stops = tuple(st.stop.node for st in plan.stages[:-1])
    subpaths = tuple(st.edges for st in plan.stages)
    return stops, subpaths


def fixed_route_baselines(
    instance: Instance,
    iters: int = 150,
    eps1: float = 1e-3,
) -> dict[str, Optional[Plan]]:
    """TIME plan plus carbon re-optimizations on its fixed route."""
    time_plan, _ = solve_mode(instance, Objective.TIME, iters=iters, eps1=eps1)
    out: dict[str, Optional[Plan]] = {"TIME": time_plan, "TIME+S": None, "TIME+SC": None}
    if time_plan is None:
        return out
    stops, subpaths = _route_of(time_plan, instance)
    carbon_inst = instance.with_objective(Objective.CARBON)
    out["TIME+S"] = dual.reoptimize_fixed_route(
        carbon_inst, stops, subpaths, optimize_travel=True, optimize_charging=False
    )
    out["TIME+SC"] = dual.reoptimize_fixed_route(
        carbon_inst, stops, subpaths, optimize_travel=True, optimize_charging=True
    )
    return out


def carbon_of(plan: Optional[Plan], instance: Instance) -> float:
    if plan is None:
        return math.nan
    return evaluate(plan, instance.with_objective(Objective.CARBON)).carbon_kg


# ---------------------------------------------------------------------------
# Reserve-ratio sweep


ALPHA_COLUMNS = (
    "alpha",
    "feasible_fraction",
    "violation_fraction",
    "mean_objective",
    "mean_performance_loss",
    "mean_gap_bound",
)


def sweep_alpha(
    instances: Iterable[Instance],
    alphas: Iterable[float],
    iters: int = 150,
    eps1: float = 1e-3,
    **kwargs,
) -> list[dict]:
    """Solve every instance at every reserve ratio; loss is relative to ratio 0.

    Performance loss of a ratio is ``(objective - objective_at_0) /
    objective_at_0`` per instance, averaged over instances solved at every
    swept ratio.  The violation fraction counts solutions whose executed
    battery trace dips below zero.
    """
    instances = list(instances)
    alphas = list(alphas)
    per_alpha: dict[float, list[Optional[dual.SolverReport]]] = {a: [] for a in alphas}
    baseline: list[Optional[float]] = []

    base_reports = [
        dual.run(replace(inst, reserve_ratio=0.0), iters=iters, eps1=eps1, **kwargs)
        for inst in instances
    ]
    baseline = [
        (rep.summary.objective if rep.summary is not None and rep.feasible else None)
        for rep in base_reports
    ]
    for a in alphas:
        for idx, inst in enumerate(instances):
            if a == 0.0:
                per_alpha[a].append(base_reports[idx])
                continue
            adjusted = replace(
                inst,
                reserve_ratio=a,
                initial_soc=max(inst.initial_soc, a * inst.capacity),
            )
            per_alpha[a].append(dual.run(adjusted, iters=iters, eps1=eps1, **kwargs))

    usable = [
        idx
        for idx in range(len(instances))
        if baseline[idx] is not None
        and all(per_alpha[a][idx].feasible for a in alphas)
    ]
    rows = []
    for a in alphas:
        reports = per_alpha[a]
        feas = [r for r in reports if r.feasible]
        violations = [
            1.0 for r in feas if r.summary is not None and not r.summary.strict_soc_ok
        ]
        losses = []
        for idx in usable:
            rep = reports[idx]
            base = baseline[idx]
            losses.append((rep.summary.objective - base) / base if base > 1e-12 else 0.0)
        gaps = [r.gap_bound for r in feas if r.gap_bound is not None]
        rows.append(
            {
                "alpha": a,
                "feasible_fraction": len(feas) / len(reports) if reports else 0.0,
                "violation_fraction": len(violations) / len(feas) if feas else 0.0,
                "mean_objective": (
                    sum(r.summary.objective for r in feas) / len(feas) if feas else math.nan
                ),
                "mean_performance_loss": sum(losses) / len(losses) if losses else math.nan,
                "mean_gap_bound": sum(gaps) / len(gaps) if gaps else math.nan,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# Deadline sweep


DEADLINE_COLUMNS = (
    "factor",
    "mode",
    "feasible_fraction",
    "mean_carbon_kg",
    "mean_energy_kwh",
    "mean_time_h",
    "carbon_reduction_vs_time",
)

_SWEEP_MODES = (Objective.TIME, Objective.ENERGY, Objective.CARBON)


def sweep_deadline(
    instances: Iterable[Instance],
    factors: Iterable[float],
    iters: int = 150,
    eps1: float = 1e-3,
    solver=None,
) -> list[dict]:
    """Per delay factor and objective mode, mean outcomes and reduction vs TIME.

    ``solver`` may override how one (instance, mode) pair is solved; it must
    return a feasible :class:`Plan` or ``None``.  Deadlines are rescaled per
    instance as factor times that instance's fastest completion.
    """
    from .scenarios import deadline_from_factor

    instances = list(instances)
    factors = sorted(factors)

    def default_solver(inst: Instance, mode: Objective) -> Optional[Plan]:
        plan, _ = solve_mode(inst, mode, iters=iters, eps1=eps1)
        return plan

    solve = solver if solver is not None else default_solver
    rows = []
    for factor in factors:
        sized = [deadline_from_factor(inst, factor) for inst in instances]
        carbon_by_mode: dict[str, list[float]] = {m.value: [] for m in _SWEEP_MODES}
        rows_this: dict[str, dict] = {}
        outcomes: dict[str, list] = {m.value: [] for m in _SWEEP_MODES}
        for inst in sized:
            for mode in _SWEEP_MODES:
                plan = solve(inst, mode)
                outcomes[mode.value].append((plan, inst))
        for mode in _SWEEP_MODES:
            pairs = outcomes[mode.value]
            feas = [(p, i) for p, i in pairs if p is not None]
            carbons = [carbon_of(p, i) for p, i in feas]
            energies = [
                evaluate(p, i.with_objective(Objective.CARBON)).energy_kwh for p, i in feas
            ]
            times = [p.duration() for p, _ in feas]
            carbon_by_mode[mode.value] = carbons
            rows_this[mode.value] = {
                "factor": factor,
                "mode": mode.value,
                "feasible_fraction": len(feas) / len(pairs) if pairs else 0.0,
                "mean_carbon_kg": sum(carbons) / len(carbons) if carbons else math.nan,
                "mean_energy_kwh": sum(energies) / len(energies) if energies else math.nan,
                "mean_time_h": sum(times) / len(times) if times else math.nan,
            }
        base = rows_this[Objective.TIME.value]["mean_carbon_kg"]
        for mode in _SWEEP_MODES:
            row = rows_this[mode.value]
            mean_c = row["mean_carbon_kg"]
            row["carbon_reduction_vs_time"] = (
                (base - mean_c) / base if base and not math.isnan(mean_c) else math.nan
            )
            rows.append(row)
    return rows


def write_csv(rows: list[dict], columns: tuple[str, ...], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
