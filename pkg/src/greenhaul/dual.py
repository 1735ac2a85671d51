"""Price-directed decomposition solver for the carbon-optimal trip problem.

The deadline and battery-balance constraints of each stage are priced into
the objective with non-negative multipliers.  For fixed prices the problem
splits into

* one convex speed subproblem per (stage, segment) -- solved exactly by
  :func:`greenhaul.energy.minimize_affine_tradeoff`;
* one four-variable charging-session subproblem per (stage, station) --
  non-convex, solved to a certified tolerance by interval branch and bound;
* an outer stop-selection problem -- solved exactly as a shortest path on a
  layered graph whose arcs are priced by the subproblem values and per-stage
  shortest paths on the road network (Bellman-Ford, weights may be negative).

The multipliers follow the constraint residuals of each iteration's
minimizer (projected subgradient ascent).  Any iterate whose residuals are
all non-positive is a feasible plan; the best one is kept together with a
posterior optimality-gap certificate from weak duality.  If no iterate is
feasible, a two-phase repair heuristic re-optimizes speeds and charging on
the final iterate's route.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import energy
from .charging import ChargingStation, Objective, stop_cost
from .errors import (
    ConfigError,
    EnergyGainCycleError,
    GreenhaulError,
    StructureError,
)
from .network import DualVector, Instance, validate_instance
from .plan import (
    FEAS_TOL,
    Plan,
    PlanSummary,
    Residuals,
    Stage,
    StopDecision,
    assemble_timeline_plan,
    evaluate,
    residuals,
)


# ---------------------------------------------------------------------------
# Speed subproblems


@dataclass(frozen=True)
class SpeedSolution:
    """Per (stage, segment) minimizers and values of the priced travel cost."""

    times: np.ndarray   # (n_stages, n_segments)
    values: np.ndarray  # (n_stages, n_segments)


def travel_price_offset(instance: Instance) -> float:
    """Extra weight on travel time in the segment costs (1 when minimizing time)."""
    return 1.0 if instance.objective is Objective.TIME else 0.0


def solve_speed_subproblem(
    instance: Instance, lam: DualVector, stage: int, segment
) -> tuple[float, float]:
    """Best travel time and priced cost for one segment at one stage."""
    k = stage - 1
    return energy.minimize_affine_tradeoff(
        segment, lam.time[k] + travel_price_offset(instance), lam.energy[k]
    )


def solve_all_speed_subproblems(instance: Instance, lam: DualVector) -> SpeedSolution:
    segs = instance.graph.segments
    n = instance.n_stages
    times = np.empty((n, len(segs)))
    values = np.empty((n, len(segs)))
    for k in range(n):
        for j, seg in enumerate(segs):
            times[k, j], values[k, j] = solve_speed_subproblem(instance, lam, k + 1, seg)
    return SpeedSolution(times, values)


# ---------------------------------------------------------------------------
# Charging-session subproblems (branch and bound)


@dataclass(frozen=True)
class SessionSolution:
    """Certified value and attaining point of one stop's priced session cost.

    ``value`` is always a certified lower bound on the true minimum.  When
    ``tight`` is set the point attains ``attained <= value + eps1``; when the
    node budget ran out first (pathological price vectors), the bound is
    still valid but the gap ``attained - value`` may exceed ``eps1``.
    """

    value: float
    point: tuple[float, float, float, float]  # (t_c, t_w, beta, tau)
    attained: float
    nodes: int
    tight: bool = True

    @property
    def slack(self) -> float:
        return self.attained - self.value


def _session_terms(instance: Instance, lam: DualVector, stage: int):
    i = stage
    lam_t_cur = lam.time[i - 1]
    lam_t_next = lam.time[i]
    lam_e_cur = lam.energy[i - 1]
    lam_e_next = lam.energy[i]
    return lam_t_cur, lam_t_next, lam_e_cur, lam_e_next


def session_cost(
    instance: Instance,
    lam: DualVector,
    stage: int,
    station: ChargingStation,
    t_c: float,
    t_w: float,
    beta: float,
    tau: float,
) -> float:
    """Priced cost of stopping at ``station`` as stop number ``stage``."""
    lam_t_cur, lam_t_next, lam_e_cur, lam_e_next = _session_terms(instance, lam, stage)
    cost = stop_cost(instance.objective, station, beta, t_c, t_w, tau, instance.efficiency)
    return (
        cost
        + lam_t_next * (t_w + t_c)
        + (lam_t_next - lam_t_cur) * tau
        + (lam_e_cur - lam_e_next) * beta
        - lam_e_next * station.curve.increment(t_c, beta)
    )


def _session_box(instance: Instance):
    box = (
        (0.0, instance.charge_ub),
        (instance.wait_lb, instance.wait_ub),
        (instance.reserve_kwh, instance.capacity),
        (0.0, instance.deadline),
    )
    for lo, hi in box:
        if hi < lo:
            raise ConfigError(f"empty decision box [{lo}, {hi}]")
    return box


class _SessionSearch:
    """Branch-and-bound state for one (stage, station) session subproblem.

    Two exact reductions keep the bounds tight enough to terminate:

    * The wait/arrival pair is eliminated: the cost depends on it only
      through the charge start ``u = tau + t_w``, and the priced remainder
      is convex piecewise-linear in ``u`` (its box minimum sits at an
      endpoint or the single kink).  The search space is ``(t_c, beta, u)``.
    * The charging cost and the energy-price recovery are bounded as one
      combined integral of (intensity/eta - price) times the charge rate,
      so a price that exactly offsets a flat intensity bounds to zero
      instead of leaving a never-closing interval gap.

    When minimizing time, the unpriced stop duration folds into effective
    time prices (current + 1), which keeps every bound exact.
    """

    def __init__(self, instance, lam, stage, station):
        self.instance = instance
        self.lam = lam
        self.stage = stage
        self.station = station
        self.mode = instance.objective
        self.eta = instance.efficiency
        t_cur, t_next, e_cur, e_next = _session_terms(instance, lam, stage)
        offset = 1.0 if self.mode is Objective.TIME else 0.0
        self.eff_t_cur = t_cur + offset
        self.eff_t_next = t_next + offset
        self.delta_t = t_next - t_cur
        self.beta_coeff = e_cur - e_next
        self.lam_e_next = e_next
        self.tc_box, self.tw_box, self.beta_box, self.tau_box = _session_box(instance)
        self.u_box = (
            self.tau_box[0] + self.tw_box[0],
            self.tau_box[1] + self.tw_box[1],
        )
        self._phi_tol = 1e-12 * max(1.0, instance.capacity)

    # -- exact wait/arrival split ------------------------------------------

    def wait_for_u(self, u: float) -> float:
        """Cheapest feasible wait given the charge start (prefers short waits)."""
        return min(max(self.tw_box[0], u - self.tau_box[1]), self.tw_box[1])

    def point4(self, tc: float, beta: float, u: float):
        tw = self.wait_for_u(u)
        tau = min(max(u - tw, self.tau_box[0]), self.tau_box[1])
        return (tc, tw, beta, tau)

    def _priced_time(self, u: float) -> float:
        tw = self.wait_for_u(u)
        return self.delta_t * (u - tw) + self.eff_t_next * tw

    def priced_time_lb(self, u_l: float, u_u: float) -> float:
        """Exact box minimum of the convex piecewise-linear priced time term."""
        cands = [u_l, u_u]
        kink = self.tw_box[0] + self.tau_box[1]
        if u_l < kink < u_u:
            cands.append(kink)
        return min(self._priced_time(u) for u in cands)

    # -- combined charging term --------------------------------------------

    def _window_hi(self, tc_u: float, b_l: float, u_u: float) -> float:
        curve = self.station.curve
        live = max(curve.full_time - curve.hours_at(min(b_l, curve.capacity)), 0.0)
        return u_u + min(tc_u, live)

    def lower_bound(self, box) -> float:
        """Largest of two valid envelopes of the nonlinear terms.

        Bound A prices the charged energy: cost and recovery combine into
        (intensity/eta - price) times the increment, exact when a flat
        intensity offsets the price.  Bound B prices the post-charge state,
        which is monotone in both charge time and entry SoC, so its corner
        is exact; that wins in the deep-discount regime (price above
        intensity) where bound A's corners mix.
        """
        (tc_l, tc_u), (b_l, b_u), (u_l, u_u) = box
        curve = self.station.curve
        phi_min = curve.increment(tc_l, b_u)
        phi_max = curve.increment(tc_u, b_l)
        if self.mode is Objective.TIME:
            pi_floor = None
        elif self.mode is Objective.ENERGY:
            pi_floor = 1.0 / self.eta
        else:
            pi_floor = (
                self.station.signal.min_between(u_l, self._window_hi(tc_u, b_l, u_u))
                / self.eta
            )

        base = self.eff_t_next * tc_l + self.priced_time_lb(u_l, u_u)

        margin = (0.0 if pi_floor is None else pi_floor) - self.lam_e_next
        bound_a = (
            base
            + min(self.beta_coeff * b_l, self.beta_coeff * b_u)
            + margin * (phi_max if margin < 0 else phi_min)
        )

        lam_e_cur = self.beta_coeff + self.lam_e_next
        state_max = b_u + curve.increment(tc_u, b_u)
        bound_b = (
            base
            + (0.0 if pi_floor is None else pi_floor * phi_min)
            - self.lam_e_next * state_max
            + min(lam_e_cur * b_l, lam_e_cur * b_u)
        )
        return max(bound_a, bound_b)

    def value(self, tc: float, beta: float, u: float) -> float:
        pt = self.point4(tc, beta, u)
        return session_cost(self.instance, self.lam, self.stage, self.station, *pt)

    # -- branching ----------------------------------------------------------

    def relevant_dims(self, box) -> list[int]:
        (tc_l, tc_u), (b_l, b_u), (u_l, u_u) = box
        curve = self.station.curve
        phi_active = self.lam_e_next > 0 or self.mode is not Objective.TIME
        phi_spread = curve.increment(tc_u, b_l) - curve.increment(tc_l, b_u)
        phi_matters = phi_active and phi_spread > self._phi_tol
        out = []
        if self.eff_t_next > 0 or phi_matters:
            out.append(0)
        if abs(self.beta_coeff) > 0 or phi_matters:
            out.append(1)
        if self.mode is Objective.CARBON:
            hi = self._window_hi(tc_u, b_l, u_u)
            if (
                self.station.signal.max_between(u_l, hi)
                - self.station.signal.min_between(u_l, hi)
            ) > 1e-15:
                out.append(2)
        return out


def solve_charging_subproblem(
    instance: Instance,
    lam: DualVector,
    stage: int,
    station: ChargingStation,
    eps1: float = 1e-3,
    node_budget: int = 400_000,
) -> SessionSolution:
    """Branch-and-bound minimization of the priced session cost over its box.

    Returns a certified lower bound ``value`` (within ``eps1`` of the true
    minimum) and a four-variable point attaining at most ``value + eps1``.
    Incumbent ties prefer shorter charging, then shorter waiting and earlier
    arrival, then a fuller battery, so runs are reproducible.
    """
    if eps1 <= 0:
        raise ConfigError(f"non-positive tolerance {eps1}")
    search = _SessionSearch(instance, lam, stage, station)
    box0 = (search.tc_box, search.beta_box, search.u_box)
    widths0 = [max(hi - lo, 0.0) for lo, hi in box0]

    def candidates(box, thorough=False):
        (tc_l, tc_u), (b_l, b_u), (u_l, u_u) = box
        pts = [(tc_l, b_u, u_l)]
        if thorough:
            curve = station.curve
            tcs = {tc_l, tc_u}
            for b_ref in (b_l, 0.5 * (b_l + b_u), b_u):
                to_full = curve.full_time - curve.hours_at(min(b_ref, curve.capacity))
                if tc_l < to_full < tc_u:
                    tcs.add(to_full)
            us = {u_l, u_u}
            if instance.objective is Objective.CARBON:
                for h in station.signal.hours:
                    if u_l < h < u_u:
                        us.add(float(h))
            for tc in sorted(tcs):
                for u in sorted(us):
                    for b in (b_u, b_l):
                        pts.append((tc, b, u))
        pts.append((0.5 * (tc_l + tc_u), 0.5 * (b_l + b_u), 0.5 * (u_l + u_u)))
        return pts

    best_pt3 = None
    best_ub = math.inf
    for pt in candidates(box0, thorough=True):
        v = search.value(*pt)
        if v < best_ub:
            best_ub, best_pt3 = v, pt

    counter = itertools.count()
    heap = [(search.lower_bound(box0), next(counter), box0)]
    resolved_floor = math.inf
    nodes = 1
    value = None
    tight = True
    while heap:
        lb, _, box = heapq.heappop(heap)
        if best_ub - lb <= eps1:
            value = min(lb, best_ub, resolved_floor)
            break
        if nodes > node_budget:
            # Budget exhausted (extreme prices): keep the certificate valid by
            # returning the loosest open bound instead of an eps1-tight one.
            value = min(lb, best_ub, resolved_floor)
            tight = False
            break
        rel = [
            (hi - lo) / w0 if w0 > 0 else 0.0
            for (lo, hi), w0 in zip(box, widths0)
        ]
        dims = search.relevant_dims(box) or [0, 1, 2]
        dim = max(dims, key=lambda d: rel[d])
        if rel[dim] < 1e-10:
            resolved_floor = min(resolved_floor, lb)
            continue
        lo, hi = box[dim]
        mid = 0.5 * (lo + hi)
        for part in ((lo, mid), (mid, hi)):
            child = tuple(part if d == dim else box[d] for d in range(3))
            nodes += 1
            for pt in candidates(child):
                v = search.value(*pt)
                if v < best_ub:
                    best_ub, best_pt3 = v, pt
            clb = search.lower_bound(child)
            if clb < best_ub:
                heapq.heappush(heap, (clb, next(counter), child))
    if value is None:
        value = min(best_ub, resolved_floor)
    return SessionSolution(value, search.point4(*best_pt3), best_ub, nodes, tight)


def solve_all_charging_subproblems(
    instance: Instance, lam: DualVector, eps1: float, node_budget: int = 400_000
) -> dict[tuple[int, str], SessionSolution]:
    out: dict[tuple[int, str], SessionSolution] = {}
    for i in range(1, instance.max_stops + 1):
        for node in instance.graph.station_nodes:
            station = instance.graph.station_at(node)
            out[(i, node)] = solve_charging_subproblem(
                instance, lam, i, station, eps1, node_budget
            )
    return out


# ---------------------------------------------------------------------------
# Stage shortest paths (Bellman-Ford; weights may be negative)


@dataclass
class PathResult:
    source: str
    dist: dict[str, float]
    pred_edge: dict[str, int]

    def cost_to(self, node: str) -> float:
        return self.dist.get(node, math.inf)

    def edges_to(self, node: str, graph) -> tuple[str, ...]:
        if node == self.source:
            return ()
        if node not in self.pred_edge:
            raise StructureError(f"{node} unreachable from {self.source}")
        rev = []
        at = node
        while at != self.source:
            if len(rev) > len(graph.segments):
                raise StructureError("predecessor chain does not terminate")
            idx = self.pred_edge[at]
            seg = graph.segments[idx]
            rev.append(seg.id)
            at = seg.tail
        return tuple(reversed(rev))


def bellman_ford(graph, weights, source: str) -> PathResult:
    """Single-source shortest paths with negative weights; rejects negative cycles."""
    dist = {source: 0.0}
    pred: dict[str, int] = {}
    n = len(graph.nodes)
    for _ in range(n - 1):
        changed = False
        for idx, seg in enumerate(graph.segments):
            du = dist.get(seg.tail)
            if du is None:
                continue
            cand = du + weights[idx]
            if cand < dist.get(seg.head, math.inf) - 0.0:
                dist[seg.head] = cand
                pred[seg.head] = idx
                changed = True
        if not changed:
            break
    scale = max(1.0, float(np.max(np.abs(weights))) if len(weights) else 1.0)
    for idx, seg in enumerate(graph.segments):
        du = dist.get(seg.tail)
        if du is not None and du + weights[idx] < dist.get(seg.head, math.inf) - 1e-9 * scale:
            raise EnergyGainCycleError(
                "negative-weight cycle in stage costs (net energy gain loop)"
            )
    return PathResult(source, dist, pred)


def all_pairs_stage_paths(
    instance: Instance, lam: DualVector, stage: int, speed: Optional[SpeedSolution] = None
) -> dict[str, PathResult]:
    """Shortest stage-``stage`` paths from the origin and every station."""
    if speed is None:
        speed = solve_all_speed_subproblems(instance, lam)
    weights = speed.values[stage - 1]
    sources = [instance.origin] + list(instance.graph.station_nodes)
    return {src: bellman_ford(instance.graph, weights, src) for src in dict.fromkeys(sources)}


# ---------------------------------------------------------------------------
# Outer stop selection (layered shortest path)


@dataclass(frozen=True)
class ExtendedGraph:
    """Layered stop-selection graph: origin, station copies per stage, destination.

    Terminal arcs carry the boundary contribution of finishing at that stage
    (deadline price times the deadline, reserve price times the reserve), so
    the shortest path value plus the origin boundary term is the full priced
    bound.
    """

    n_layers: int
    stations: tuple[str, ...]
    edges: tuple[tuple[object, object, float], ...]


def _terminal_boundary(instance: Instance, lam: DualVector, arrival_stage: int) -> float:
    j = arrival_stage
    return -lam.time[j - 1] * instance.deadline + lam.energy[j - 1] * instance.reserve_kwh


@dataclass(frozen=True)
class OuterSolution:
    dual_value: float
    arrival_stage: int
    stops: tuple[str, ...]
    subpaths: tuple[tuple[str, ...], ...]
    boundary_adjust: float
    graph: ExtendedGraph


def build_extended_graph(
    instance: Instance,
    lam: DualVector,
    sessions: dict[tuple[int, str], SessionSolution],
    paths: dict[int, dict[str, PathResult]],
) -> ExtendedGraph:
    stations = instance.graph.station_nodes
    n_stops = instance.max_stops
    d = instance.destination
    s = instance.origin
    edges: list[tuple[object, object, float]] = []
    sp1 = paths[1][s]
    cost_sd = sp1.cost_to(d)
    if math.isfinite(cost_sd):
        edges.append(("s", "d", cost_sd + _terminal_boundary(instance, lam, 1)))
    for v in stations:
        c = sp1.cost_to(v)
        if math.isfinite(c):
            edges.append(("s", ("st", v, 1), c))
    for i in range(1, n_stops + 1):
        for u in stations:
            sigma = sessions[(i, u)].value
            spq = paths[i + 1][u]
            if i < n_stops:
                for v in stations:
                    c = spq.cost_to(v)
                    if math.isfinite(c):
                        edges.append((("st", u, i), ("st", v, i + 1), sigma + c))
            c = spq.cost_to(d)
            if math.isfinite(c):
                edges.append(
                    (
                        ("st", u, i),
                        "d",
                        sigma + c + _terminal_boundary(instance, lam, i + 1),
                    )
                )
    return ExtendedGraph(n_stops, stations, tuple(edges))


def solve_outer(
    instance: Instance,
    lam: DualVector,
    speed: SpeedSolution,
    sessions: dict[tuple[int, str], SessionSolution],
    paths: dict[int, dict[str, PathResult]],
) -> OuterSolution:
    """Exact stop selection by layered shortest path over the extended graph.

    Fewer than the budgeted number of stops is handled by terminal arcs from
    every layer (arriving early and staying parked at the destination is
    free).  On ties the earliest arrival stage and lexicographically smallest
    station sequence win.
    """
    stations = instance.graph.station_nodes
    n_stops = instance.max_stops
    s, d = instance.origin, instance.destination
    ex = build_extended_graph(instance, lam, sessions, paths)

    dist: dict[tuple[str, int], float] = {}
    parent: dict[tuple[str, int], Optional[tuple[str, int]]] = {}
    sp1 = paths[1][s]
    for v in stations:
        c = sp1.cost_to(v)
        if math.isfinite(c):
            dist[(v, 1)] = c
            parent[(v, 1)] = None
    for i in range(1, n_stops):
        for u in stations:
            du = dist.get((u, i))
            if du is None:
                continue
            base = du + sessions[(i, u)].value
            spq = paths[i + 1][u]
            for v in stations:
                c = spq.cost_to(v)
                if math.isfinite(c) and base + c < dist.get((v, i + 1), math.inf):
                    dist[(v, i + 1)] = base + c
                    parent[(v, i + 1)] = (u, i)

    best_cost = math.inf
    best_from: Optional[tuple[str, int]] = None
    c_direct = sp1.cost_to(d)
    if math.isfinite(c_direct):
        best_cost = c_direct + _terminal_boundary(instance, lam, 1)
    for i in range(1, n_stops + 1):
        for u in stations:
            du = dist.get((u, i))
            if du is None:
                continue
            c = paths[i + 1][u].cost_to(d)
            if not math.isfinite(c):
                continue
            cand = du + sessions[(i, u)].value + c + _terminal_boundary(instance, lam, i + 1)
            if cand < best_cost:
                best_cost = cand
                best_from = (u, i)
    if not math.isfinite(best_cost):
        raise StructureError(f"destination {d} unreachable in the stop-selection graph")

    stops: list[str] = []
    at = best_from
    while at is not None:
        stops.append(at[0])
        at = parent[at]
    stops.reverse()
    arrival_stage = len(stops) + 1

    subpaths: list[tuple[str, ...]] = []
    prev = s
    for i, v in enumerate(stops, start=1):
        subpaths.append(paths[i][prev].edges_to(v, instance.graph))
        prev = v
    subpaths.append(paths[arrival_stage][prev].edges_to(d, instance.graph))

    dual_value = -lam.energy[0] * instance.initial_soc + best_cost
    adjust = _terminal_boundary(instance, lam, arrival_stage) - (
        -lam.time[instance.n_stages - 1] * instance.deadline
    )
    return OuterSolution(
        dual_value=dual_value,
        arrival_stage=arrival_stage,
        stops=tuple(stops),
        subpaths=tuple(subpaths),
        boundary_adjust=adjust,
        graph=ex,
    )


# ---------------------------------------------------------------------------
# Dual evaluation and the plan built from one iteration's minimizers


@dataclass(frozen=True)
class DualEvaluation:
    outer: OuterSolution
    plan: Plan
    speed: SpeedSolution
    sessions: dict[tuple[int, str], SessionSolution]


def plan_from_outer(
    instance: Instance,
    outer: OuterSolution,
    speed: SpeedSolution,
    sessions: dict[tuple[int, str], SessionSolution],
) -> Plan:
    g = instance.graph
    seg_index = {seg.id: j for j, seg in enumerate(g.segments)}
    stages = []
    for i, edges in enumerate(outer.subpaths, start=1):
        times = tuple(float(speed.times[i - 1, seg_index[e]]) for e in edges)
        if i < outer.arrival_stage:
            node = outer.stops[i - 1]
            t_c, t_w, beta, tau = sessions[(i, node)].point
            stop = StopDecision(node, t_w, t_c, tau, beta)
        else:
            stop = StopDecision(
                instance.destination, 0.0, 0.0, instance.deadline, instance.reserve_kwh
            )
        stages.append(Stage(edges, times, stop))
    return Plan(tuple(stages))


def evaluate_dual(
    instance: Instance,
    lam: DualVector,
    eps1: float = 1e-3,
    node_budget: int = 400_000,
) -> DualEvaluation:
    speed = solve_all_speed_subproblems(instance, lam)
    sessions = solve_all_charging_subproblems(instance, lam, eps1, node_budget)
    paths = {
        stage: all_pairs_stage_paths(instance, lam, stage, speed)
        for stage in range(1, instance.n_stages + 1)
    }
    outer = solve_outer(instance, lam, speed, sessions, paths)
    plan = plan_from_outer(instance, outer, speed, sessions)
    return DualEvaluation(outer, plan, speed, sessions)


# ---------------------------------------------------------------------------
# Subgradient loop


def dual_update(lam: DualVector, res: Residuals, step: float) -> DualVector:
    """Projected ascent step: move along the residuals, clamp at zero."""
    if step <= 0:
        raise ConfigError(f"non-positive step size {step}")
    return DualVector(
        np.maximum(0.0, lam.time + step * res.time),
        np.maximum(0.0, lam.energy + step * res.energy),
    )


def weighted_residual_sum(lam: DualVector, res: Residuals) -> float:
    return float(np.dot(lam.time, res.time) + np.dot(lam.energy, res.energy))


def posterior_gap_value(lam: DualVector, res: Residuals, certificate_slack: float = 0.0) -> float:
    """Weak-duality bound on (feasible objective - optimum).

    ``certificate_slack`` is the gap between the selected charging
    subproblems' attained values and their certified lower bounds; including
    it keeps the bound rigorous when those subproblems are solved to a
    tolerance rather than exactly.
    """
    return -weighted_residual_sum(lam, res) + certificate_slack


@dataclass(frozen=True)
class IterationRow:
    k: int
    dual_value: float
    max_residual: float
    best_feasible_objective: float
    gap_bound: float
    boundary_adjust: float


@dataclass
class SolverReport:
    termination: str  # optimal | iteration-limit | recovered | infeasible
    plan: Optional[Plan]
    summary: Optional[PlanSummary]
    dual_bound: float
    gap_bound: Optional[float]
    iterations: list[IterationRow] = field(default_factory=list)
    best_multipliers: Optional[DualVector] = None
    best_residuals: Optional[Residuals] = None
    certificate_slack: float = 0.0

    @property
    def feasible(self) -> bool:
        return self.summary is not None and self.summary.feasible


def posterior_gap(report: SolverReport) -> float:
    """Optimality-gap certificate of the report's feasible plan."""
    if report.best_multipliers is None or report.best_residuals is None:
        raise ConfigError("report holds no dual certificate (no feasible dual iterate)")
    return posterior_gap_value(
        report.best_multipliers, report.best_residuals, report.certificate_slack
    )


def run(
    instance: Instance,
    iters: int = 200,
    eps1: float = 1e-3,
    step_size: Optional[float] = None,
    step_scale: float = 1.0,
    optimal_tol: float = FEAS_TOL,
    feas_tol: float = FEAS_TOL,
    polyak: bool = False,
    polish: bool = True,
    node_budget: int = 400_000,
    validate: bool = True,
    on_iteration: Optional[Callable[[IterationRow], None]] = None,
) -> SolverReport:
    """Projected subgradient ascent on the prices (the main solve entry point).

    The default step size is ``1 / sqrt(iters)`` (constant schedule).  The
    optional Polyak mode rescales each step by the current primal-dual gap
    over the squared residual norm, seeding its upper-bound estimate by
    repairing the first iterate's route; on badly scaled instances this
    avoids the constant schedule's overshoot oscillation.  Returns
    immediately, flagged ``optimal``, if an iterate's residuals all vanish
    within ``optimal_tol``.  With ``polish``, the returned plan is locally
    re-optimized on its fixed route, which can only lower its objective and
    therefore keeps the posterior gap certificate valid.
    """
    if iters <= 0:
        raise ConfigError(f"iteration budget {iters} must be positive")
    if validate:
        rep = validate_instance(instance)
        if not rep.passed:
            raise ConfigError("invalid instance: " + "; ".join(rep.violations))

    n = instance.n_stages
    lam = DualVector.zeros(n)
    base_step = (step_size if step_size is not None else 1.0 / math.sqrt(iters)) * step_scale
    best_plan: Optional[Plan] = None
    best_summary: Optional[PlanSummary] = None
    best_lam: Optional[DualVector] = None
    best_res: Optional[Residuals] = None
    best_slack = 0.0
    fallback_plan: Optional[Plan] = None
    fallback_obj = math.inf
    dual_bound = -math.inf
    rows: list[IterationRow] = []
    last_outer: Optional[OuterSolution] = None

    def remember_fallback(outer: OuterSolution) -> None:
        nonlocal fallback_plan, fallback_obj
        repaired = recover_feasible(instance, outer.stops, outer.subpaths)
        if repaired is not None:
            obj = evaluate(repaired, instance, tol=feas_tol).objective
            if obj < fallback_obj:
                fallback_plan, fallback_obj = repaired, obj

    for k in range(1, iters + 1):
        ev = evaluate_dual(instance, lam, eps1, node_budget)
        last_outer = ev.outer
        res = residuals(ev.plan, instance).padded(n)
        summ = evaluate(ev.plan, instance, tol=feas_tol)
        dual_bound = max(dual_bound, ev.outer.dual_value)
        slack = sum(
            ev.sessions[(i, v)].slack for i, v in enumerate(ev.outer.stops, start=1)
        )

        if summ.feasible and (best_summary is None or summ.objective < best_summary.objective):
            best_plan, best_summary = ev.plan, summ
            best_lam, best_res = lam.copy(), res
            best_slack = slack

        gap = (
            posterior_gap_value(best_lam, best_res, best_slack)
            if best_lam is not None
            else math.nan
        )
        row = IterationRow(
            k=k,
            dual_value=ev.outer.dual_value,
            max_residual=float(
                max(np.max(np.abs(res.time)), np.max(np.abs(res.energy)))
            ),
            best_feasible_objective=(
                best_summary.objective if best_summary is not None else math.nan
            ),
            gap_bound=gap,
            boundary_adjust=ev.outer.boundary_adjust,
        )
        rows.append(row)
        if on_iteration is not None:
            on_iteration(row)

        if row.max_residual <= optimal_tol and summ.feasible:
            return SolverReport(
                termination="optimal",
                plan=ev.plan,
                summary=summ,
                dual_bound=dual_bound,
                gap_bound=posterior_gap_value(lam, res, slack),
                iterations=rows,
                best_multipliers=lam.copy(),
                best_residuals=res,
                certificate_slack=slack,
            )

        step = base_step
        if polyak:
            if best_summary is None and fallback_plan is None and k == 1:
                remember_fallback(ev.outer)
            upper = (
                best_summary.objective
                if best_summary is not None
                else (fallback_obj if fallback_plan is not None else None)
            )
            norm2 = float(np.dot(res.time, res.time) + np.dot(res.energy, res.energy))
            if upper is not None and norm2 > 1e-18:
                gap_est = max(upper - ev.outer.dual_value, 10 * optimal_tol)
                step = max(min(gap_est / norm2, 1e4 * base_step), 1e-6 * base_step)
        lam = dual_update(lam, res, step)

    if best_plan is not None:
        plan, summary = best_plan, best_summary
        if polish:
            stops = tuple(st.stop.node for st in plan.stages[:-1])
            subpaths = tuple(st.edges for st in plan.stages)
            better = reoptimize_fixed_route(instance, stops, subpaths)
            if better is not None:
                cand = evaluate(better, instance, tol=feas_tol)
                if cand.feasible and cand.objective < summary.objective:
                    plan, summary = better, cand
        return SolverReport(
            termination="iteration-limit",
            plan=plan,
            summary=summary,
            dual_bound=dual_bound,
            gap_bound=posterior_gap_value(best_lam, best_res, best_slack),
            iterations=rows,
            best_multipliers=best_lam,
            best_residuals=best_res,
            certificate_slack=best_slack,
        )

    remember_fallback(last_outer)
    if fallback_plan is not None:
        return SolverReport(
            termination="recovered",
            plan=fallback_plan,
            summary=evaluate(fallback_plan, instance, tol=feas_tol),
            dual_bound=dual_bound,
            gap_bound=None,
            iterations=rows,
        )
    return SolverReport(
        termination="infeasible",
        plan=None,
        summary=None,
        dual_bound=dual_bound,
        gap_bound=None,
        iterations=rows,
    )


# ---------------------------------------------------------------------------
# Feasibility recovery on a fixed route


def _timeline_plan(
    instance: Instance,
    stops: tuple[str, ...],
    subpaths: tuple[tuple[str, ...], ...],
    base_times,
    scales,
    waits,
    charges,
) -> Optional[Plan]:
    """Plan from per-stage scalings of base travel times plus stop decisions.

    Entry times and SoCs come from the executed timeline.  Returns ``None``
    when the battery books cannot balance or the deadline is missed.
    """
    g = instance.graph
    times = []
    for i, edges in enumerate(subpaths):
        row = []
        for e, t0 in zip(edges, base_times[i]):
            seg = g.segment_by_id(e)
            row.append(min(seg.t_ub, max(seg.t_lb, t0 * scales[i])))
        times.append(row)
    plan = assemble_timeline_plan(instance, stops, subpaths, times, waits, charges)
    for stage in plan.stages[:-1]:
        if stage.stop.beta < instance.reserve_kwh - 1e-12:
            return None
    last = plan.stages[-1].stop
    if last.beta < instance.reserve_kwh - 1e-12 or last.tau > instance.deadline + 1e-12:
        return None
    return plan


def _speed_profiles(instance: Instance, subpaths):
    """Candidate base travel times: full speed, then energy-minimal speeds."""
    g = instance.graph
    fast = [[g.segment_by_id(e).t_lb for e in edges] for edges in subpaths]
    thrifty = [
        [energy.minimize_affine_tradeoff(g.segment_by_id(e), 0.0, 1.0)[0] for e in edges]
        for edges in subpaths
    ]
    return [fast, thrifty]


def _greedy_min_charge(instance, stops, subpaths):
    """Greedy forward pass: charge at each stop just enough for the next stage.

    Tries full speed first; if the energy books cannot close, retries at
    energy-minimal speeds.  Returns ``(plan, base_times, waits, charges)`` or
    ``None``.
    """
    g = instance.graph
    n_stages = len(subpaths)
    for base_times in _speed_profiles(instance, subpaths):
        consumption = [
            sum(
                energy.edge_energy(g.segment_by_id(e), t)
                for e, t in zip(subpaths[i], base_times[i])
            )
            for i in range(n_stages)
        ]
        charges = []
        beta = instance.initial_soc
        ok = True
        for i in range(n_stages):
            beta -= consumption[i]
            if beta < instance.reserve_kwh - 1e-12:
                ok = False
                break
            if i == n_stages - 1:
                break
            station = g.station_at(stops[i])
            if station is None:
                return None
            beta = min(beta, instance.capacity)
            target = instance.reserve_kwh + consumption[i + 1]
            if target > instance.capacity + 1e-12:
                ok = False
                break
            t_c = 0.0
            if target > beta:
                t_c = station.curve.hours_at(min(target, instance.capacity)) - station.curve.hours_at(beta)
                if t_c > instance.charge_ub + 1e-12:
                    ok = False
                    break
                t_c = min(t_c, instance.charge_ub)
            charges.append(t_c)
            beta = beta + station.curve.increment(t_c, beta)
        if not ok:
            continue
        waits = [instance.wait_lb] * max(n_stages - 1, 0)
        scales = [1.0] * n_stages
        plan = _timeline_plan(instance, stops, subpaths, base_times, scales, waits, charges)
        if plan is not None and evaluate(plan, instance).feasible:
            return plan, base_times, waits, charges
    return None


def recover_feasible(
    instance: Instance,
    stops: tuple[str, ...],
    subpaths: tuple[tuple[str, ...], ...],
) -> Optional[Plan]:
    """Two-phase repair on a fixed route.

    Phase 1 drives fast (falling back to thrifty speeds if the battery books
    demand it) and charges at each stop just enough for the next stage; if
    that timeline beats the deadline, the plan is feasible.  Phase 2 spends
    the remaining slack with coordinate descent over per-stop wait/charge
    times and per-stage uniform travel-time scalings, accepting only
    feasible cost-decreasing moves.
    """
    return reoptimize_fixed_route(instance, stops, subpaths)


def reoptimize_fixed_route(
    instance: Instance,
    stops: tuple[str, ...],
    subpaths: tuple[tuple[str, ...], ...],
    optimize_travel: bool = True,
    optimize_charging: bool = True,
    max_sweeps: int = 40,
) -> Optional[Plan]:
    """Repair then locally re-optimize speeds and/or charging on a fixed route."""
    seeded = _greedy_min_charge(instance, stops, subpaths)
    if seeded is None:
        return None
    plan, base_times, waits, charges = seeded
    improved = _coordinate_descent(
        instance,
        stops,
        subpaths,
        base_times,
        ([1.0] * len(subpaths), waits, charges),
        optimize_travel,
        optimize_charging,
        max_sweeps=max_sweeps,
    )
    return improved if improved is not None else plan


def _coordinate_descent(
    instance,
    stops,
    subpaths,
    base_times,
    params,
    optimize_travel: bool,
    optimize_charging: bool,
    grid: int = 17,
    min_gain: float = 1e-6,
    max_sweeps: int = 40,
) -> Optional[Plan]:
    scales, waits, charges = ([list(p) for p in params])
    n_stages = len(subpaths)
    g = instance.graph

    def build():
        return _timeline_plan(
            instance, stops, subpaths, base_times, scales, waits, charges
        )

    def score(p: Optional[Plan]) -> float:
        if p is None:
            return math.inf
        summ = evaluate(p, instance)
        return summ.objective if summ.feasible else math.inf

    current = build()
    best_val = score(current)
    if not math.isfinite(best_val):
        return None

    coords: list[tuple[str, int, float, float]] = []
    if optimize_travel:
        for i in range(n_stages):
            if not subpaths[i]:
                continue
            lo = min(
                g.segment_by_id(e).t_lb / t0
                for e, t0 in zip(subpaths[i], base_times[i])
            )
            hi = max(
                g.segment_by_id(e).t_ub / t0
                for e, t0 in zip(subpaths[i], base_times[i])
            )
            coords.append(("scale", i, lo, hi))
    if optimize_charging:
        for i in range(n_stages - 1):
            coords.append(("wait", i, instance.wait_lb, instance.wait_ub))
            coords.append(("charge", i, 0.0, instance.charge_ub))

    holders = {"scale": scales, "wait": waits, "charge": charges}
    for _ in range(max_sweeps):
        gained = 0.0
        for kind, idx, lo, hi in coords:
            holder = holders[kind]
            original = holder[idx]
            candidates = np.unique(
                np.concatenate((np.linspace(lo, hi, grid), [original]))
            )
            best_c, best_c_val = original, best_val
            for c in candidates:
                holder[idx] = float(c)
                v = score(build())
                if v < best_c_val - 0.0:
                    best_c, best_c_val = float(c), v
            holder[idx] = best_c
            gained += best_val - best_c_val
            best_val = best_c_val
        if gained <= min_gain:
            break
    final = build()
    return final if math.isfinite(score(final)) else None
