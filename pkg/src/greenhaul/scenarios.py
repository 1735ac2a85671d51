"""Deterministic synthetic instances for tests and desk-scale experiments.

The road-grade-to-power mapping is a documented synthetic family: on grade
``g`` (fraction, positive uphill) a segment gets the cubic power model

    p(r) = 4.0 + a1 * r + 0.003 * r^2 + 6e-5 * r^3        [kW, r in km/h]
    a1   = 98.1 * (g_eff + 0.0063),  g_eff = g if g >= 0 else 0.65 * g

i.e. rolling resistance plus grade force times speed for the linear term
(36 t at 9.81 m/s^2, downhill recovery derated to 65%), a small drivetrain
loss term, and an aerodynamic cubic term.  The quadratic and cubic
coefficients are non-negative, so the travel-time energy function is convex
on any speed window regardless of grade; steep downhills give negative power
over most of the admissible speeds (regenerative segments).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import dual, energy
from .charging import ChargeCurve, ChargingStation, IntensitySignal, Objective
from .errors import ConfigError, EnergyGainCycleError, GreenhaulError, StructureError
from .network import Instance, RoadSegment, TransportGraph, validate_instance

#: grid intensities by generation mix (kg CO2 per kWh)
INTENSITY_COAL = 1.02
INTENSITY_GAS = 0.39
INTENSITY_RENEWABLE = 0.0

_ACCESSORY_KW = 4.0
_LOSS_QUAD = 0.003
_AERO_CUBIC = 6e-5
_GRADE_FORCE = 98.1          # kW per (km/h) per unit grade at 36 t
_ROLLING = 0.0063
_REGEN_DERATE = 0.65


@dataclass(frozen=True)
class TruckPreset:
    name: str
    capacity: float
    initial_soc_fraction: float = 1.0
    wait_lb: float = 0.1
    wait_ub: float = 1.0
    charge_ub: float = 1.2
    efficiency: float = 1.0


#: paper-scale semi (1 MWh pack) and a small pack that forces charging stops
PRESETS = {
    "semi": TruckPreset("semi", capacity=1000.0),
    "compact": TruckPreset("compact", capacity=250.0),
}


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int
    topology: str = "line"            # line | grid | random-planar
    n_nodes: int = 6
    station_density: float = 0.4
    grade_range: tuple[float, float] = (-0.06, 0.06)
    intensity_family: str = "constant"  # constant | diurnal | two_region
    intensity_value: float = INTENSITY_GAS
    preset: str = "compact"
    max_stops: int = 2
    reserve_ratio: float = 0.05
    delay_factor: float = 1.2
    regen_heavy: bool = False
    segment_km: tuple[float, float] = (40.0, 110.0)


def grade_power_poly(grade: float) -> tuple[float, float, float, float]:
    g_eff = grade if grade >= 0 else _REGEN_DERATE * grade
    a1 = _GRADE_FORCE * (g_eff + _ROLLING)
    return (_ACCESSORY_KW, a1, _LOSS_QUAD, _AERO_CUBIC)


def _sample_grade(rng, spec: ScenarioSpec) -> float:
    lo, hi = spec.grade_range
    if spec.regen_heavy:
        # rolling terrain: mostly alternating steep grades
        mag = rng.uniform(0.6 * max(abs(lo), hi), max(abs(lo), hi))
        return -mag if rng.random() < 0.5 else mag
    return float(np.clip(rng.normal(0.0, 0.022), lo, hi))


def _make_segment(rng, spec, seg_id, tail, head, grade=None) -> RoadSegment:
    grade = _sample_grade(rng, spec) if grade is None else grade
    # steep stretches are short in real corridors; keeps one segment's climb
    # well inside a battery window
    length = rng.uniform(*spec.segment_km) / (1.0 + 12.0 * abs(grade))
    lo = rng.uniform(55.0, 70.0)
    hi = rng.uniform(88.0, 108.0)
    return RoadSegment(
        id=seg_id,
        tail=tail,
        head=head,
        length_km=float(length),
        speed_lb=float(lo),
        speed_ub=float(hi),
        power_poly=grade_power_poly(float(grade)),
    )


def _build_topology(rng, spec: ScenarioSpec):
    n = spec.n_nodes
    if n < 3:
        raise ConfigError("need at least 3 nodes")
    names = [f"n{i}" for i in range(n)]
    segments: list[RoadSegment] = []
    sid = iter(f"e{i}" for i in range(10 * n * n))

    if spec.topology == "line":
        for i in range(n - 1):
            segments.append(_make_segment(rng, spec, next(sid), names[i], names[i + 1]))
        # a few shortcuts so path choice matters
        for i in range(n - 2):
            if rng.random() < 0.35:
                segments.append(_make_segment(rng, spec, next(sid), names[i], names[i + 2]))
    elif spec.topology == "grid":
        side = int(math.ceil(math.sqrt(n)))
        names = [f"n{r}_{c}" for r in range(side) for c in range(side)]

        def at(r, c):
            return names[r * side + c]

        for r in range(side):
            for c in range(side):
                if c + 1 < side:
                    grade = _sample_grade(rng, spec)
                    segments.append(_make_segment(rng, spec, next(sid), at(r, c), at(r, c + 1), grade))
                    segments.append(_make_segment(rng, spec, next(sid), at(r, c + 1), at(r, c), -grade))
                if r + 1 < side:
                    grade = _sample_grade(rng, spec)
                    segments.append(_make_segment(rng, spec, next(sid), at(r, c), at(r + 1, c), grade))
                    segments.append(_make_segment(rng, spec, next(sid), at(r + 1, c), at(r, c), -grade))
    elif spec.topology == "random-planar":
        pts = rng.uniform(0.0, 1.0, size=(n, 2))
        order = np.argsort(pts[:, 0], kind="stable")
        pts = pts[order]
        for i in range(n):
            dists = np.hypot(pts[:, 0] - pts[i, 0], pts[:, 1] - pts[i, 1])
            dists[i] = math.inf
            for j in np.argsort(dists, kind="stable")[:2]:
                j = int(j)
                a, b = min(i, j), max(i, j)
                fid, rid = f"e{a}_{b}f", f"e{a}_{b}r"
                if any(s.id == fid for s in segments):
                    continue
                grade = _sample_grade(rng, spec)
                segments.append(_make_segment(rng, spec, fid, names[a], names[b], grade))
                segments.append(_make_segment(rng, spec, rid, names[b], names[a], -grade))
        for i in range(n - 1):  # keep the corridor connected
            fid = f"c{i}f"
            if not any(s.tail == names[i] and s.head == names[i + 1] for s in segments):
                grade = _sample_grade(rng, spec)
                segments.append(_make_segment(rng, spec, fid, names[i], names[i + 1], grade))
    else:
        raise ConfigError(f"unknown topology {spec.topology!r}")
    return names, segments


def _assert_no_gain_cycles(names, segments) -> None:
    weights = np.array([energy.min_energy(seg) for seg in segments])
    graph = TransportGraph(tuple(names), tuple(segments), ())
    for src in names:
        dual.bellman_ford(graph, weights, src)


def _scale_to_battery(names, segments, origin, destination, preset, spec):
    """Rescale segment lengths so the trip fits the battery and stop budget.

    The cheapest-energy route should need roughly the usable initial charge
    plus a moderate fraction of each allowed stop's fast-charge window;
    energies scale exactly linearly with length (speeds unchanged), so one
    rescale lands on target.
    """
    graph = TransportGraph(tuple(names), tuple(segments), ())
    weights = np.array([energy.min_energy(seg) for seg in segments])
    sp = dual.bellman_ford(graph, weights, origin)
    e_min = sp.cost_to(destination)
    if not math.isfinite(e_min):
        raise ConfigError(f"{destination} unreachable from {origin}")
    reserve = spec.reserve_ratio * preset.capacity
    usable = preset.initial_soc_fraction * preset.capacity - reserve
    per_stop = 0.8 * preset.capacity - reserve
    target = 0.6 * usable if spec.max_stops == 0 else usable + 0.45 * spec.max_stops * per_stop
    if e_min <= 1e-9:
        return segments
    gamma = min(max(target / e_min, 0.25), 4.0)
    segments = [replace(seg, length_km=seg.length_km * gamma) for seg in segments]
    # No single segment may drain more than about half a battery window at
    # full speed, or stage feasibility dies regardless of charging.
    cap = 0.55 * (preset.capacity - reserve)
    out = []
    for seg in segments:
        e_fast = energy.edge_energy(seg, seg.t_lb)
        if e_fast > cap:
            out.append(replace(seg, length_km=seg.length_km * cap / e_fast))
        else:
            out.append(seg)
    return out


def _intensity_for(rng, spec: ScenarioSpec, horizon: float, position: float) -> IntensitySignal:
    if spec.intensity_family == "constant":
        return IntensitySignal.constant(spec.intensity_value, horizon)
    if spec.intensity_family == "two_region":
        level = INTENSITY_COAL if position < 0.5 else INTENSITY_RENEWABLE
        return IntensitySignal.constant(level, horizon)
    if spec.intensity_family == "diurnal":
        base = rng.uniform(0.3, 0.7)
        amp = rng.uniform(0.15, min(base, 0.45))
        phase = rng.uniform(0.0, 24.0)
        hours = np.arange(0.0, horizon + 1.0, 1.0)
        vals = np.maximum(base + amp * np.sin(2 * math.pi * (hours + phase) / 24.0), 0.0)
        return IntensitySignal(tuple(float(h) for h in hours), tuple(float(v) for v in vals))
    raise ConfigError(f"unknown intensity family {spec.intensity_family!r}")


def generate(spec: ScenarioSpec) -> Instance:
    """Deterministic instance from a scenario spec (same seed, same bytes)."""
    rng = np.random.default_rng(spec.seed)
    preset = PRESETS[spec.preset]
    for attempt in range(8):
        names, segments = _build_topology(rng, spec)
        try:
            _assert_no_gain_cycles(names, segments)
            break
        except EnergyGainCycleError:
            continue
    else:
        raise GreenhaulError("could not generate a network without energy-gain cycles")

    origin, destination = names[0], names[-1]
    segments = _scale_to_battery(names, segments, origin, destination, preset, spec)
    interior = [nm for nm in names if nm not in (origin, destination)]
    if not interior:
        raise ConfigError("no interior nodes available for stations")
    n_st = min(max(1, round(spec.station_density * len(interior))), len(interior))
    # Stratified placement: one station per corridor band (jittered), so a
    # stop is always in reach within one battery window.
    station_nodes = []
    for k in range(n_st):
        band_lo = k * len(interior) / n_st
        band_hi = (k + 1) * len(interior) / n_st
        idx = int(rng.integers(int(band_lo), max(int(band_hi), int(band_lo) + 1)))
        idx = min(idx, len(interior) - 1)
        if interior[idx] not in station_nodes:
            station_nodes.append(interior[idx])
    station_nodes.sort(key=interior.index)

    horizon_guess = sum(seg.t_ub for seg in segments) + spec.max_stops * 4.0 + 48.0
    curve = ChargeCurve.default(preset.capacity)
    stations = tuple(
        ChargingStation(
            node,
            curve,
            _intensity_for(rng, spec, horizon_guess, idx / max(len(station_nodes) - 1, 1)),
        )
        for idx, node in enumerate(station_nodes)
    )
    graph = TransportGraph(tuple(names), tuple(segments), stations)

    provisional = Instance(
        graph=graph,
        origin=origin,
        destination=destination,
        deadline=horizon_guess / 2.0,
        capacity=preset.capacity,
        initial_soc=preset.initial_soc_fraction * preset.capacity,
        max_stops=spec.max_stops,
        reserve_ratio=spec.reserve_ratio,
        wait_lb=preset.wait_lb,
        wait_ub=preset.wait_ub,
        charge_ub=preset.charge_ub,
        efficiency=preset.efficiency,
        objective=Objective.CARBON,
    )
    if not station_nodes and spec.max_stops > 0:
        raise ConfigError("no stations generated but charging stops required")
    instance = deadline_from_factor(provisional, spec.delay_factor)
    report = validate_instance(instance)
    if not report.passed:
        raise GreenhaulError("generated instance failed validation: " + "; ".join(report.violations))
    return instance


def fastest_completion(instance: Instance, iters: int = 60) -> float:
    """Completion time of the fastest feasible plan (the deadline anchor).

    Small station sets are enumerated directly: every stop sequence, the
    time-shortest paths between consecutive stops, full speed everywhere,
    and greedy just-enough charging.  Larger instances fall back to the
    time-objective solver.
    """
    import itertools

    g = instance.graph
    stations = g.station_nodes
    n_seq = sum(len(stations) ** m for m in range(instance.max_stops + 1))
    best = math.inf
    if stations and n_seq <= 400 or not stations:
        weights = np.array([seg.t_lb for seg in g.segments])
        paths = {
            src: dual.bellman_ford(g, weights, src)
            for src in dict.fromkeys([instance.origin, *stations])
        }
        for m in range(instance.max_stops + 1):
            for seq in itertools.product(stations, repeat=m):
                legs = [instance.origin, *seq, instance.destination]
                try:
                    subpaths = tuple(
                        paths[a].edges_to(b, g) for a, b in zip(legs[:-1], legs[1:])
                    )
                except StructureError:
                    continue
                timed = instance.with_objective(Objective.TIME)
                plan = dual.reoptimize_fixed_route(timed, seq, subpaths, max_sweeps=6)
                if plan is not None:
                    best = min(best, plan.duration())
    if math.isfinite(best):
        return best
    relaxed = replace(instance.with_objective(Objective.TIME), deadline=instance.deadline)
    report = dual.run(relaxed, iters=iters, eps1=1e-3, validate=False, node_budget=4000)
    if report.plan is None:
        raise GreenhaulError("no feasible time-minimizing plan within the provisional deadline")
    return report.plan.duration()


def deadline_from_factor(instance: Instance, factor: float, iters: int = 60) -> Instance:
    """Rescale the deadline to ``factor`` times the fastest completion time."""
    if factor < 1.0:
        raise ConfigError(f"delay factor {factor} must be >= 1")
    t_fast = fastest_completion(instance, iters=iters)
    return replace(instance, deadline=factor * t_fast)
