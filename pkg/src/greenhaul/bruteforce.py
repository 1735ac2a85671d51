"""Independent brute-force ground truth for desk-sized instances.

Everything is enumerated: station sequences, simple subpaths between
consecutive stops, and a grid over every decision variable (per-segment
travel times, per-stop wait and charge durations).  Entry times and SoCs are
derived from the timeline, so the search is exact on the grid.  Interval
endpoints are always grid points because fastest-speed / zero-charge /
full-charge corners are common optima.

The search refuses anything beyond small hard caps; it exists to validate
the solver, not to scale.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import energy
from .charging import Objective, footprint_array
from .errors import OracleSizeError
from .network import Instance
from .plan import FEAS_TOL, Plan, assemble_timeline_plan, evaluate

#: refuse instances larger than these, whatever the grid settings
MAX_NODES = 15
MAX_STATIONS = 4
MAX_STOPS = 2
MAX_PATH_LEN = 8


@dataclass(frozen=True)
class OracleConfig:
    time_points: int = 5
    charge_points: int = 7
    wait_points: int = 3
    max_path_len: int = 6
    strict_soc: bool = True
    state_budget: int = 4_000_000

    def __post_init__(self):
        if min(self.time_points, self.charge_points, self.wait_points) < 2:
            raise ValueError("grid resolutions must be at least 2")
        if self.max_path_len > MAX_PATH_LEN:
            raise ValueError(f"max_path_len capped at {MAX_PATH_LEN}")

    def refined(self) -> "OracleConfig":
        """Nested refinement: doubling keeps every existing grid point."""
        return replace(
            self,
            time_points=2 * self.time_points - 1,
            charge_points=2 * self.charge_points - 1,
            wait_points=2 * self.wait_points - 1,
        )


@dataclass(frozen=True)
class OracleResult:
    feasible: bool
    plan: Optional[Plan]
    objective: float
    error_bound: float
    decompositions: int
    states: int


def simple_paths(graph, source: str, target: str, max_len: int) -> list[tuple[str, ...]]:
    """All simple edge sequences source -> target with at most ``max_len`` edges.

    The empty path is the only candidate when source == target (repeat stops
    park in place).
    """
    if source == target:
        return [()]
    out: list[tuple[str, ...]] = []
    segs = graph.segments

    def walk(at: str, visited: set[str], acc: list[str]):
        if len(acc) >= max_len:
            return
        for idx in sorted(range(len(segs)), key=lambda j: segs[j].id):
            seg = segs[idx]
            if seg.tail != at or seg.head in visited:
                continue
            if seg.head == target:
                out.append(tuple(acc + [seg.id]))
                continue
            visited.add(seg.head)
            walk(seg.head, visited, acc + [seg.id])
            visited.remove(seg.head)

    walk(source, {source}, [])
    return out


def _refuse_if_large(instance: Instance, config: OracleConfig) -> None:
    g = instance.graph
    problems = []
    if len(g.nodes) > MAX_NODES:
        problems.append(f"{len(g.nodes)} nodes > {MAX_NODES}")
    if len(g.stations) > MAX_STATIONS:
        problems.append(f"{len(g.stations)} stations > {MAX_STATIONS}")
    if instance.max_stops > MAX_STOPS:
        problems.append(f"stop budget {instance.max_stops} > {MAX_STOPS}")
    if problems:
        raise OracleSizeError("instance too large for brute force: " + ", ".join(problems))


def _stage_grid(instance: Instance, edges: tuple[str, ...], config: OracleConfig):
    """Vectorize one subpath: total time, energy, and worst prefix draw per combo."""
    g = instance.graph
    if not edges:
        return (np.zeros(1), np.zeros(1), np.zeros(1), [])
    grids = []
    for e in edges:
        seg = g.segment_by_id(e)
        grids.append(np.linspace(seg.t_lb, seg.t_ub, config.time_points))
    mesh = np.meshgrid(*grids, indexing="ij")
    times = [m.reshape(-1) for m in mesh]
    total_time = np.zeros_like(times[0])
    cum = np.zeros_like(times[0])
    peak_draw = np.zeros_like(times[0])
    for e, t in zip(edges, times):
        seg = g.segment_by_id(e)
        total_time = total_time + t
        cum = cum + energy.edge_energy_array(seg, t)
        peak_draw = np.maximum(peak_draw, cum)
    return total_time, cum, peak_draw, grids


def enumerate_optimal(instance: Instance, config: OracleConfig = OracleConfig()) -> OracleResult:
    """Grid-exact minimum over all stage decompositions of a small instance.

    Returns the best feasible grid plan (strict battery trace included when
    configured), its objective, and a finite-difference estimate of the grid
    resolution error around the optimum.  Raises :class:`OracleSizeError`
    when the instance or the implied state space is too large.
    """
    _refuse_if_large(instance, config)
    g = instance.graph
    stations = g.station_nodes
    tol = FEAS_TOL

    best_obj = math.inf
    best = None  # (stops, subpaths, times, waits, charges)
    n_decomp = 0
    n_states = 0

    for m in range(0, instance.max_stops + 1):
        for seq in itertools.product(stations, repeat=m):
            legs = [instance.origin, *seq, instance.destination]
            leg_paths = [
                simple_paths(g, a, b, config.max_path_len)
                for a, b in zip(legs[:-1], legs[1:])
            ]
            if any(not p for p in leg_paths):
                continue
            for combo in itertools.product(*leg_paths):
                n_decomp += 1
                result = _sweep_decomposition(instance, seq, combo, config)
                if result is None:
                    continue
                obj, knobs, states = result
                n_states += states
                if obj < best_obj - 0.0:
                    best_obj = obj
                    best = (seq, combo, *knobs)

    if best is None:
        return OracleResult(False, None, math.inf, 0.0, n_decomp, n_states)

    seq, combo, times, waits, charges = best
    plan = assemble_timeline_plan(instance, seq, combo, times, waits, charges)
    summary = evaluate(plan, instance, strict_soc=config.strict_soc, tol=tol)
    if not summary.feasible:
        raise AssertionError("oracle winner failed re-evaluation; grids out of sync")
    if abs(summary.objective - best_obj) > 1e-6 * max(1.0, abs(best_obj)):
        raise AssertionError("oracle vector/scalar objective mismatch")
    err = _grid_error_bound(instance, seq, combo, times, waits, charges, config)
    return OracleResult(True, plan, summary.objective, err, n_decomp, n_states)


def _sweep_decomposition(instance: Instance, stops, subpaths, config: OracleConfig):
    """Vectorized scan of all grid combinations for one fixed route."""
    g = instance.graph
    n_stages = len(subpaths)
    tol = FEAS_TOL
    cap_tol = tol * max(1.0, instance.capacity)
    mode = instance.objective

    stage_data = [_stage_grid(instance, tuple(p), config) for p in subpaths]
    w_grid = np.linspace(instance.wait_lb, instance.wait_ub, config.wait_points)
    c_grid = np.linspace(0.0, instance.charge_ub, config.charge_points)
    wc = np.array(list(itertools.product(w_grid, c_grid)))
    n_wc = len(wc)

    total = 1
    for d in stage_data:
        total *= len(d[0])
    total *= n_wc ** max(n_stages - 1, 0)
    if total > config.state_budget:
        raise OracleSizeError(
            f"grid has {total} states for one route (> {config.state_budget})"
        )

    tau = np.zeros(1)
    beta = np.full(1, float(instance.initial_soc))
    cost = np.zeros(1)
    choice_trail: list[np.ndarray] = []
    live_parents: list[np.ndarray] = []
    states_seen = 0

    for i in range(n_stages):
        stage_time, stage_energy, peak_draw, _ = stage_data[i]
        n_c = len(stage_time)
        tau = (tau[:, None] + stage_time[None, :]).reshape(-1)
        min_soc = (beta[:, None] - peak_draw[None, :]).reshape(-1)
        beta = (beta[:, None] - stage_energy[None, :]).reshape(-1)
        cost = np.repeat(cost, n_c)
        if mode is Objective.TIME:
            cost = cost + np.tile(stage_time, len(cost) // n_c)
        keep = (tau <= instance.deadline + tol) & (beta >= instance.reserve_kwh - cap_tol)
        if config.strict_soc:
            keep &= min_soc >= -cap_tol
        idx = np.nonzero(keep)[0]
        states_seen += keep.size
        if idx.size == 0:
            return None
        choice_trail.append(idx % n_c)
        live_parents.append(idx // n_c)
        tau, beta, cost = tau[idx], beta[idx], cost[idx]

        if i < n_stages - 1:
            station = g.station_at(stops[i])
            entry = np.minimum(beta, instance.capacity)
            tau2 = (tau[:, None] + (wc[:, 0] + wc[:, 1])[None, :]).reshape(-1)
            start = (tau[:, None] + wc[None, :, 0]).reshape(-1)
            entry_rep = np.repeat(entry, n_wc)
            charge_rep = np.tile(wc[:, 1], len(entry))
            phi = station.curve.increment_array(charge_rep, entry_rep)
            if mode is Objective.CARBON:
                stop_costs = footprint_array(
                    station, entry_rep, charge_rep, start, instance.efficiency
                )
            elif mode is Objective.ENERGY:
                stop_costs = phi / instance.efficiency
            else:
                stop_costs = (
                    np.tile(wc[:, 0], len(entry)) + charge_rep
                )
            cost = np.repeat(cost, n_wc) + stop_costs
            beta = entry_rep + phi
            tau = tau2
            keep = tau <= instance.deadline + tol
            idx = np.nonzero(keep)[0]
            states_seen += keep.size
            if idx.size == 0:
                return None
            choice_trail.append(idx % n_wc)
            live_parents.append(idx // n_wc)
            tau, beta, cost = tau[idx], beta[idx], cost[idx]

    winner = int(np.argmin(cost))
    obj = float(cost[winner])

    # Backtrack the per-level choices of the winning state.
    choices: list[int] = []
    at = winner
    for lvl in range(len(choice_trail) - 1, -1, -1):
        choices.append(int(choice_trail[lvl][at]))
        at = int(live_parents[lvl][at])
    choices.reverse()

    times = []
    waits = []
    charges = []
    pos = 0
    for i in range(n_stages):
        _, _, _, grids = stage_data[i]
        combo = choices[pos]
        pos += 1
        stage_times = []
        if grids:
            shape = tuple(len(gr) for gr in grids)
            multi = np.unravel_index(combo, shape)
            stage_times = [float(grids[k][multi[k]]) for k in range(len(grids))]
        times.append(stage_times)
        if i < n_stages - 1:
            wc_idx = choices[pos]
            pos += 1
            waits.append(float(wc[wc_idx, 0]))
            charges.append(float(wc[wc_idx, 1]))
    return obj, (times, waits, charges), states_seen


def _grid_error_bound(instance, stops, subpaths, times, waits, charges, config) -> float:
    """Finite-difference sensitivity of the optimum to one grid step per knob."""
    g = instance.graph

    def objective_of(t, w, c) -> float:
        try:
            plan = assemble_timeline_plan(instance, stops, subpaths, t, w, c)
            return evaluate(plan, instance, strict_soc=False).objective
        except Exception:
            return math.nan

    base = objective_of(times, waits, charges)
    total = 0.0

    def probe(assign, lo, hi, step, current):
        nonlocal total
        worst = 0.0
        for cand in (current - step, current + step):
            cand = min(max(cand, lo), hi)
            if cand == current:
                continue
            assign(cand)
            v = objective_of(times, waits, charges)
            if not math.isnan(v):
                worst = max(worst, abs(v - base))
        assign(current)
        total += worst

    for i, stage_times in enumerate(times):
        for k, t in enumerate(stage_times):
            seg = g.segment_by_id(subpaths[i][k])
            step = (seg.t_ub - seg.t_lb) / (config.time_points - 1)
            if step <= 0:
                continue
            probe(lambda v, i=i, k=k: times[i].__setitem__(k, v), seg.t_lb, seg.t_ub, step, t)
    w_step = (instance.wait_ub - instance.wait_lb) / (config.wait_points - 1)
    c_step = instance.charge_ub / (config.charge_points - 1)
    for i in range(len(waits)):
        if w_step > 0:
            probe(
                lambda v, i=i: waits.__setitem__(i, v),
                instance.wait_lb,
                instance.wait_ub,
                w_step,
                waits[i],
            )
        if c_step > 0:
            probe(
                lambda v, i=i: charges.__setitem__(i, v),
                0.0,
                instance.charge_ub,
                c_step,
                charges[i],
            )
    return total
