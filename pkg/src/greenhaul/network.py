"""Transportation graph, trip instance, and the instance file format.

Units are fixed package-wide: hours, km, kWh, kg CO2.  Instance files are
JSON documents with top-level keys ``nodes``, ``edges``, ``stations`` and
``params``; the ``units`` key documents the conventions.  All domain objects
are immutable after construction and safe to share across solver runs.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .charging import ChargeCurve, ChargingStation, IntensitySignal, Objective
from .errors import ConfigError, DomainError
from . import energy

UNITS = {
    "time": "hours",
    "distance": "km",
    "energy": "kWh",
    "intensity": "kg_per_kWh",
    "speed": "km_per_hour",
    "power": "kW",
}


@dataclass(frozen=True)
class RoadSegment:
    """Directed road segment with speed limits and a cubic power model."""

    id: str
    tail: str
    head: str
    length_km: float
    speed_lb: float
    speed_ub: float
    power_poly: tuple[float, float, float, float]

    def __post_init__(self):
        if self.length_km <= 0:
            raise ConfigError(f"segment {self.id}: non-positive length {self.length_km}")
        if self.speed_lb <= 0 or self.speed_ub < self.speed_lb:
            raise ConfigError(
                f"segment {self.id}: invalid speed bounds [{self.speed_lb}, {self.speed_ub}]"
            )
        if len(self.power_poly) != 4:
            raise ConfigError(f"segment {self.id}: power polynomial needs 4 coefficients")

    @property
    def t_lb(self) -> float:
        return self.length_km / self.speed_ub

    @property
    def t_ub(self) -> float:
        return self.length_km / self.speed_lb


def travel_time_bounds(segment: RoadSegment) -> tuple[float, float]:
    """(fastest, slowest) traversal times in hours."""
    return segment.t_lb, segment.t_ub


@dataclass(frozen=True)
class TransportGraph:
    """Directed highway graph; charging stations are flagged nodes."""

    nodes: tuple[str, ...]
    segments: tuple[RoadSegment, ...]
    stations: tuple[ChargingStation, ...]

    def __post_init__(self):
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise ConfigError("duplicate node ids")
        ids = set()
        for seg in self.segments:
            if seg.id in ids:
                raise ConfigError(f"duplicate segment id {seg.id}")
            ids.add(seg.id)
            if seg.tail not in node_set or seg.head not in node_set:
                raise ConfigError(f"segment {seg.id} references unknown node")
        seen = set()
        for st in self.stations:
            if st.node not in node_set:
                raise ConfigError(f"station at unknown node {st.node}")
            if st.node in seen:
                raise ConfigError(f"duplicate station at node {st.node}")
            seen.add(st.node)

    @property
    def station_nodes(self) -> tuple[str, ...]:
        return tuple(sorted(st.node for st in self.stations))

    def station_at(self, node: str) -> Optional[ChargingStation]:
        for st in self.stations:
            if st.node == node:
                return st
        return None

    def segment_by_id(self, seg_id: str) -> RoadSegment:
        for seg in self.segments:
            if seg.id == seg_id:
                return seg
        raise ConfigError(f"unknown segment id {seg_id}")

    def out_segments(self, node: str) -> tuple[int, ...]:
        return tuple(i for i, seg in enumerate(self.segments) if seg.tail == node)

    def reachable_from(self, source: str) -> set[str]:
        seen = {source}
        frontier = [source]
        while frontier:
            u = frontier.pop()
            for seg in self.segments:
                if seg.tail == u and seg.head not in seen:
                    seen.add(seg.head)
                    frontier.append(seg.head)
        return seen


@dataclass(frozen=True)
class Instance:
    """One trip: graph, endpoints, deadline, battery, and stop/charge budgets."""

    graph: TransportGraph
    origin: str
    destination: str
    deadline: float
    capacity: float
    initial_soc: float
    max_stops: int
    reserve_ratio: float = 0.05
    wait_lb: float = 0.1
    wait_ub: float = 1.0
    charge_ub: float = 1.2
    efficiency: float = 1.0
    objective: Objective = Objective.CARBON

    def __post_init__(self):
        if self.origin == self.destination:
            raise ConfigError("origin equals destination")
        if self.origin not in self.graph.nodes or self.destination not in self.graph.nodes:
            raise ConfigError("origin/destination not in graph")
        if self.deadline <= 0:
            raise ConfigError(f"non-positive deadline {self.deadline}")
        if self.max_stops < 0:
            raise ConfigError(f"negative stop budget {self.max_stops}")
        if not (0 <= self.reserve_ratio < 1):
            raise ConfigError(f"reserve ratio {self.reserve_ratio} outside [0, 1)")
        if not (self.reserve_kwh <= self.initial_soc <= self.capacity * (1 + 1e-12)):
            raise ConfigError(
                f"initial SoC {self.initial_soc} outside "
                f"[{self.reserve_kwh}, {self.capacity}]"
            )
        if self.wait_lb < 0 or self.wait_ub < self.wait_lb:
            raise ConfigError(f"invalid wait bounds [{self.wait_lb}, {self.wait_ub}]")
        if self.charge_ub < 0:
            raise ConfigError(f"negative charge bound {self.charge_ub}")
        if not (0 < self.efficiency <= 1):
            raise ConfigError(f"efficiency {self.efficiency} outside (0, 1]")

    @property
    def reserve_kwh(self) -> float:
        return self.reserve_ratio * self.capacity

    @property
    def n_stages(self) -> int:
        return self.max_stops + 1

    @property
    def horizon(self) -> float:
        """Latest time scheduling arithmetic can touch (deadline + max stop duration)."""
        return self.deadline + self.wait_ub + self.charge_ub

    def with_objective(self, mode: Objective) -> "Instance":
        return replace(self, objective=mode)


@dataclass
class DualVector:
    """Non-negative stage prices: per-hour (time) and per-kWh (energy).

    Index ``k`` holds the multiplier of stage ``k + 1``; both arrays have one
    entry per stage (stop budget + 1).
    """

    time: np.ndarray
    energy: np.ndarray

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float)
        self.energy = np.asarray(self.energy, dtype=float)
        if self.time.shape != self.energy.shape or self.time.ndim != 1:
            raise ConfigError("dual vector components must be 1-D and equal length")
        if np.any(self.time < 0) or np.any(self.energy < 0):
            raise ConfigError("dual multipliers must be non-negative")

    @classmethod
    def zeros(cls, n_stages: int) -> "DualVector":
        return cls(np.zeros(n_stages), np.zeros(n_stages))

    def copy(self) -> "DualVector":
        return DualVector(self.time.copy(), self.energy.copy())


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return not self.violations


def validate_instance(instance: Instance, grid_points: int = 1000) -> ValidationReport:
    """Check the model assumptions the solver relies on; report all violations."""
    bad: list[str] = []
    g = instance.graph
    for seg in g.segments:
        if not _energy_convex(seg, grid_points):
            bad.append(f"segment {seg.id}: energy function not convex on travel-time range")
    for st in g.stations:
        if abs(st.curve.capacity - instance.capacity) > 1e-9 * max(1.0, instance.capacity):
            bad.append(
                f"station {st.node}: charge curve tops out at {st.curve.capacity}, "
                f"battery capacity is {instance.capacity}"
            )
        if not st.signal.covers(0.0, instance.deadline):
            bad.append(
                f"station {st.node}: intensity signal does not cover [0, {instance.deadline}]"
            )
        roundtrip = max(
            abs(st.curve.soc_at(st.curve.hours_at(s)) - s)
            for s in np.linspace(0.0, st.curve.capacity, 101)
        )
        if roundtrip > 1e-9 * max(1.0, st.curve.capacity):
            bad.append(f"station {st.node}: charge curve inverse round-trip error {roundtrip}")
    if instance.destination not in g.reachable_from(instance.origin):
        bad.append(f"destination {instance.destination} unreachable from {instance.origin}")
    return ValidationReport(tuple(bad))


def _energy_convex(seg: RoadSegment, grid_points: int) -> bool:
    t = np.linspace(seg.t_lb, seg.t_ub, grid_points)
    if len(t) < 3 or seg.t_ub <= seg.t_lb:
        return True
    c = energy.edge_energy_array(seg, t)
    second = c[2:] - 2 * c[1:-1] + c[:-2]
    return bool(np.all(second >= -1e-9 * max(1.0, float(np.max(np.abs(c))))))


# ---------------------------------------------------------------------------
# Instance file format


def instance_to_dict(instance: Instance) -> dict:
    g = instance.graph
    return {
        "units": dict(UNITS),
        "nodes": list(g.nodes),
        "edges": [
            {
                "id": seg.id,
                "from": seg.tail,
                "to": seg.head,
                "length_km": seg.length_km,
                "speed_kmh": [seg.speed_lb, seg.speed_ub],
                "power_poly_kw": list(seg.power_poly),
            }
            for seg in g.segments
        ],
        "stations": [
            {
                "node": st.node,
                "charge_curve": {
                    "minutes": [h * 60.0 for h in st.curve.hours],
                    "soc_fraction": [s / st.curve.capacity for s in st.curve.soc],
                },
                "intensity": {
                    "hours": list(st.signal.hours),
                    "kg_per_kwh": list(st.signal.values),
                },
            }
            for st in g.stations
        ],
        "params": {
            "origin": instance.origin,
            "destination": instance.destination,
            "deadline_h": instance.deadline,
            "battery_kwh": instance.capacity,
            "initial_soc_kwh": instance.initial_soc,
            "max_stops": instance.max_stops,
            "reserve_ratio": instance.reserve_ratio,
            "wait_bounds_h": [instance.wait_lb, instance.wait_ub],
            "charge_time_ub_h": instance.charge_ub,
            "efficiency": instance.efficiency,
            "objective": instance.objective.value,
        },
    }


def instance_from_dict(doc: dict, base_dir: str = ".") -> Instance:
    params = doc["params"]
    capacity = float(params["battery_kwh"])
    stations = []
    for entry in doc.get("stations", []):
        curve_doc = entry["charge_curve"]
        curve = ChargeCurve.from_minutes_fractions(
            curve_doc["minutes"], curve_doc["soc_fraction"], capacity
        )
        intensity = entry["intensity"]
        if "file" in intensity:
            signal = load_intensity_trace(os.path.join(base_dir, intensity["file"]))
        else:
            signal = IntensitySignal(tuple(intensity["hours"]), tuple(intensity["kg_per_kwh"]))
        stations.append(ChargingStation(entry["node"], curve, signal))
    segments = tuple(
        RoadSegment(
            id=e["id"],
            tail=e["from"],
            head=e["to"],
            length_km=float(e["length_km"]),
            speed_lb=float(e["speed_kmh"][0]),
            speed_ub=float(e["speed_kmh"][1]),
            power_poly=tuple(float(c) for c in e["power_poly_kw"]),
        )
        for e in doc["edges"]
    )
    graph = TransportGraph(tuple(doc["nodes"]), segments, tuple(stations))
    return Instance(
        graph=graph,
        origin=params["origin"],
        destination=params["destination"],
        deadline=float(params["deadline_h"]),
        capacity=capacity,
        initial_soc=float(params["initial_soc_kwh"]),
        max_stops=int(params["max_stops"]),
        reserve_ratio=float(params.get("reserve_ratio", 0.05)),
        wait_lb=float(params.get("wait_bounds_h", [0.1, 1.0])[0]),
        wait_ub=float(params.get("wait_bounds_h", [0.1, 1.0])[1]),
        charge_ub=float(params.get("charge_time_ub_h", 1.2)),
        efficiency=float(params.get("efficiency", 1.0)),
        objective=Objective(params.get("objective", "carbon")),
    )


def instance_to_json(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), indent=2, sort_keys=True)


def save_instance(instance: Instance, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(instance_to_json(instance))
        fh.write("\n")


def load_instance(path: str) -> Instance:
    with open(path) as fh:
        doc = json.load(fh)
    return instance_from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def load_intensity_trace(path: str) -> IntensitySignal:
    """Two-column text trace: hours-since-trip-start and kg/kWh per line."""
    hours, values = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigError(f"{path}: expected two columns, got {line!r}")
            hours.append(float(parts[0]))
            values.append(float(parts[1]))
    if len(hours) < 2:
        raise ConfigError(f"{path}: need at least two trace points")
    return IntensitySignal(tuple(hours), tuple(values))
