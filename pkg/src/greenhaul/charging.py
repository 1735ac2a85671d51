"""Charging dynamics, grid carbon intensity, and per-stop cost accounting.

The two core curve objects are piecewise linear:

* :class:`ChargeCurve` maps cumulative plug-in time (hours) to battery SoC
  (kWh).  It is strictly increasing with non-increasing slopes (CC-CV style
  fast charging) and saturates at the battery capacity.
* :class:`IntensitySignal` maps trip time (hours) to the grid carbon
  intensity (kg CO2 per kWh) at one station.

Because both are piecewise linear, the carbon footprint of a charging
session (intensity times instantaneous charge rate, integrated over the
session) has an exact closed form; no quadrature is involved.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ConfigError, DomainError

_SLOPE_TOL = 1e-9

# Default fast-charge profile: SoC fractions reached at the listed minutes.
# Linear up to 80% (48 min), then progressively slower CC-CV segments.
DEFAULT_CURVE_MINUTES = (0.0, 48.0, 52.0, 57.0, 65.0, 77.0)
DEFAULT_CURVE_FRACTIONS = (0.0, 0.80, 0.85, 0.90, 0.95, 1.00)


class Objective(str, Enum):
    """What the planner minimizes: charging carbon, charged energy, or trip time."""

    CARBON = "carbon"
    ENERGY = "energy"
    TIME = "time"


def _interp_scalar(x: float, xs: tuple[float, ...], ys: tuple[float, ...]) -> float:
    """Piecewise-linear evaluation clamped to the endpoint values."""
    if x <= xs[0]:
        return ys[0]
    if x >= xs[-1]:
        return ys[-1]
    k = bisect.bisect_right(xs, x)
    x0, x1 = xs[k - 1], xs[k]
    y0, y1 = ys[k - 1], ys[k]
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


@dataclass(frozen=True)
class ChargeCurve:
    """Monotone concave piecewise-linear charging profile.

    ``hours[k]`` is the plug-in time needed to reach ``soc[k]`` kWh starting
    from an empty battery.  The last SoC value is the battery capacity; any
    plug-in time beyond ``hours[-1]`` keeps the battery full (rate zero).
    """

    hours: tuple[float, ...]
    soc: tuple[float, ...]

    def __post_init__(self):
        if len(self.hours) != len(self.soc) or len(self.hours) < 2:
            raise ConfigError("charge curve needs matching time/SoC breakpoints (>= 2)")
        if self.hours[0] != 0.0 or self.soc[0] != 0.0:
            raise ConfigError("charge curve must start at (0, 0)")
        slopes = []
        for k in range(len(self.hours) - 1):
            dt = self.hours[k + 1] - self.hours[k]
            ds = self.soc[k + 1] - self.soc[k]
            if dt <= 0 or ds <= 0:
                raise ConfigError("charge curve must be strictly increasing")
            slopes.append(ds / dt)
        for a, b in zip(slopes, slopes[1:]):
            if b > a * (1 + _SLOPE_TOL) + _SLOPE_TOL:
                raise ConfigError("charge curve not concave (slopes increase)")

    @classmethod
    def default(cls, capacity_kwh: float) -> "ChargeCurve":
        return cls.from_minutes_fractions(
            DEFAULT_CURVE_MINUTES, DEFAULT_CURVE_FRACTIONS, capacity_kwh
        )

    @classmethod
    def from_minutes_fractions(cls, minutes, fractions, capacity_kwh: float) -> "ChargeCurve":
        hours = tuple(m / 60.0 for m in minutes)
        soc = tuple(f * capacity_kwh for f in fractions)
        return cls(hours, soc)

    @property
    def capacity(self) -> float:
        return self.soc[-1]

    @property
    def full_time(self) -> float:
        """Plug-in time to reach a full battery from empty."""
        return self.hours[-1]

    def soc_at(self, t: float) -> float:
        """SoC after charging an empty battery for ``t`` hours (saturates at capacity)."""
        if t < 0:
            raise DomainError(f"negative charging time {t}")
        return _interp_scalar(t, self.hours, self.soc)

    def hours_at(self, soc: float) -> float:
        """Inverse profile: plug-in time at which the given SoC is reached."""
        if soc < 0 or soc > self.capacity * (1 + 1e-12):
            raise DomainError(f"SoC {soc} outside [0, {self.capacity}]")
        return _interp_scalar(min(soc, self.capacity), self.soc, self.hours)

    def left_rate(self, t: float) -> float:
        """Left derivative of the profile at plug-in time ``t`` (kW).

        At segment joins the slope of the piece ending at ``t`` is used; past
        the full-battery point the rate is zero.
        """
        if t <= self.hours[0]:
            k = 1
        elif t >= self.hours[-1]:
            return 0.0
        else:
            k = bisect.bisect_left(self.hours, t)
            if self.hours[k] > t:
                # strictly inside piece (k-1, k)
                pass
            # t == hours[k]: left piece is (k-1, k) as well
        return (self.soc[k] - self.soc[k - 1]) / (self.hours[k] - self.hours[k - 1])

    def increment(self, t_c: float, beta: float) -> float:
        """Energy added by charging ``t_c`` hours starting from SoC ``beta``."""
        if t_c < 0:
            raise DomainError(f"negative charging time {t_c}")
        if beta < -1e-12 or beta > self.capacity * (1 + 1e-12):
            raise DomainError(f"initial SoC {beta} outside [0, {self.capacity}]")
        beta = min(max(beta, 0.0), self.capacity)
        return self.soc_at(self.hours_at(beta) + t_c) - beta

    def increment_array(self, t_c, beta):
        """Vectorized :meth:`increment` (no domain checks; inputs assumed valid)."""
        t_c = np.asarray(t_c, dtype=float)
        beta = np.asarray(beta, dtype=float)
        start = np.interp(beta, self.soc, self.hours)
        return np.interp(start + t_c, self.hours, self.soc) - beta

    def time_to_full(self, beta: float) -> float:
        return self.full_time - self.hours_at(beta)


@dataclass(frozen=True)
class IntensitySignal:
    """Piecewise-linear grid carbon intensity over trip time (kg CO2 / kWh).

    Strict evaluation (:meth:`at`) is limited to the breakpoint span.  For
    scheduling arithmetic that may peek past the data horizon (a session that
    starts near the deadline), the signal is held constant beyond its ends;
    the ``*_clamped`` helpers and :meth:`antiderivative` implement that.
    """

    hours: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.hours) != len(self.values) or len(self.hours) < 2:
            raise ConfigError("intensity signal needs matching breakpoints (>= 2)")
        for a, b in zip(self.hours, self.hours[1:]):
            if b <= a:
                raise ConfigError("intensity breakpoints must be strictly increasing")
        if any(v < 0 for v in self.values):
            raise ConfigError("carbon intensity must be non-negative")
        cum = [0.0]
        for k in range(len(self.hours) - 1):
            seg = 0.5 * (self.values[k + 1] + self.values[k]) * (
                self.hours[k + 1] - self.hours[k]
            )
            cum.append(cum[-1] + seg)
        object.__setattr__(self, "_cum", tuple(cum))

    @classmethod
    def constant(cls, value: float, horizon: float) -> "IntensitySignal":
        return cls((0.0, horizon), (value, value))

    @property
    def start(self) -> float:
        return self.hours[0]

    @property
    def end(self) -> float:
        return self.hours[-1]

    def covers(self, lo: float, hi: float) -> bool:
        return self.start <= lo and self.end >= hi

    def at(self, tau: float) -> float:
        if tau < self.start or tau > self.end:
            raise DomainError(f"time {tau} outside intensity domain [{self.start}, {self.end}]")
        return _interp_scalar(tau, self.hours, self.values)

    def at_clamped(self, tau: float) -> float:
        return _interp_scalar(tau, self.hours, self.values)

    def _antiderivative_scalar(self, x: float) -> float:
        h, v, cum = self.hours, self.values, self._cum
        if x <= h[0]:
            return v[0] * (x - h[0])
        if x >= h[-1]:
            return cum[-1] + v[-1] * (x - h[-1])
        k = bisect.bisect_right(h, x) - 1
        dx = x - h[k]
        slope = (v[k + 1] - v[k]) / (h[k + 1] - h[k])
        return cum[k] + v[k] * dx + 0.5 * slope * dx * dx

    def antiderivative(self, x):
        """Integral of the (end-clamped) signal from ``hours[0]`` to ``x``.

        Accepts scalars or arrays.  Exact: each piece integrates to a
        quadratic, the clamped extensions to linear terms.
        """
        if np.ndim(x) == 0:
            return self._antiderivative_scalar(float(x))
        h = np.asarray(self.hours)
        v = np.asarray(self.values)
        cum = np.asarray(self._cum)
        xf = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(h, xf, side="right") - 1, 0, len(h) - 2)
        h0 = h[idx]
        v0 = v[idx]
        slope = (v[idx + 1] - v0) / (h[idx + 1] - h0)
        dx = xf - h0
        out = cum[idx] + v0 * dx + 0.5 * slope * dx * dx
        below = xf < h[0]
        out[below] = v[0] * (xf[below] - h[0])
        above = xf > h[-1]
        out[above] = cum[-1] + v[-1] * (xf[above] - h[-1])
        return out

    def integral(self, a, b):
        """Exact integral of the clamped signal over [a, b] (supports arrays)."""
        return self.antiderivative(b) - self.antiderivative(a)

    def min_between(self, a: float, b: float) -> float:
        return self._extreme(a, b, min)

    def max_between(self, a: float, b: float) -> float:
        return self._extreme(a, b, max)

    def _extreme(self, a: float, b: float, pick) -> float:
        if b < a:
            raise DomainError(f"empty interval [{a}, {b}]")
        best = pick(self.at_clamped(a), self.at_clamped(b))
        lo = bisect.bisect_right(self.hours, a)
        hi = bisect.bisect_left(self.hours, b)
        for k in range(lo, hi):
            best = pick(best, self.values[k])
        return best

    def extended(self, lo: float, hi: float) -> "IntensitySignal":
        """Signal whose breakpoints cover [lo, hi], holding end values constant."""
        hours = list(self.hours)
        values = list(self.values)
        if lo < hours[0]:
            hours.insert(0, lo)
            values.insert(0, values[0])
        if hi > hours[-1]:
            hours.append(hi)
            values.append(values[-1])
        return IntensitySignal(tuple(hours), tuple(values))


@dataclass(frozen=True)
class ChargingStation:
    """A charging location: node id, charge profile, and local intensity signal."""

    node: str
    curve: ChargeCurve
    signal: IntensitySignal


def soc_increment(curve: ChargeCurve, t_c: float, beta: float) -> float:
    """Energy (kWh) gained by charging ``t_c`` hours from initial SoC ``beta``."""
    return curve.increment(t_c, beta)


def intensity_at(signal: IntensitySignal, tau: float) -> float:
    """Carbon intensity (kg/kWh) at trip time ``tau`` (strict domain)."""
    return signal.at(tau)


def carbon_footprint(
    station: ChargingStation,
    beta: float,
    t_c: float,
    tau_start: float,
    eta: float = 1.0,
) -> float:
    """Exact CO2 (kg) of charging ``t_c`` hours from SoC ``beta`` starting at ``tau_start``.

    The charge rate is a step function over the curve pieces and the
    intensity is piecewise linear, so the session integral is a finite sum
    of exact piece integrals.  Past the full-battery point the rate is zero;
    past the signal's data horizon the intensity is held constant.
    """
    if t_c < 0:
        raise DomainError(f"negative charging time {t_c}")
    if tau_start < 0:
        raise DomainError(f"negative session start {tau_start}")
    if eta <= 0 or eta > 1:
        raise DomainError(f"charging efficiency {eta} outside (0, 1]")
    curve, signal = station.curve, station.signal
    if beta < 0 or beta > curve.capacity * (1 + 1e-12):
        raise DomainError(f"SoC {beta} outside [0, {curve.capacity}]")
    u0 = curve.hours_at(min(beta, curve.capacity))
    u1 = u0 + t_c
    total = 0.0
    for k in range(len(curve.hours) - 1):
        a = max(curve.hours[k], u0)
        b = min(curve.hours[k + 1], u1)
        if b <= a:
            continue
        rate = (curve.soc[k + 1] - curve.soc[k]) / (curve.hours[k + 1] - curve.hours[k])
        total += rate * signal.integral(tau_start + (a - u0), tau_start + (b - u0))
    return total / eta


def footprint_array(station: ChargingStation, beta, t_c, tau_start, eta: float = 1.0):
    """Vectorized :func:`carbon_footprint` over broadcastable arrays.

    Used by grid searches; loops over the (few) curve pieces while keeping
    the state dimension vectorized.
    """
    curve, signal = station.curve, station.signal
    beta = np.asarray(beta, dtype=float)
    t_c = np.asarray(t_c, dtype=float)
    tau_start = np.asarray(tau_start, dtype=float)
    u0 = np.interp(beta, curve.soc, curve.hours)
    u1 = u0 + t_c
    total = np.zeros(np.broadcast(beta, t_c, tau_start).shape)
    for k in range(len(curve.hours) - 1):
        a = np.maximum(curve.hours[k], u0)
        b = np.minimum(curve.hours[k + 1], u1)
        live = b > a
        if not np.any(live):
            continue
        rate = (curve.soc[k + 1] - curve.soc[k]) / (curve.hours[k + 1] - curve.hours[k])
        seg = rate * signal.integral(tau_start + (a - u0), tau_start + (b - u0))
        total += np.where(live, seg, 0.0)
    return total / eta


def stop_cost(
    mode: Objective,
    station: ChargingStation,
    beta: float,
    t_c: float,
    t_w: float,
    tau_arrival: float,
    eta: float = 1.0,
) -> float:
    """Cost charged to one stop under the given objective.

    Charging starts after the wait, at ``tau_arrival + t_w``.  CARBON uses
    the station's real intensity signal; ENERGY prices every charged kWh at
    one (so the cost is the grid draw ``increment / eta``); TIME counts the
    time spent standing still.
    """
    if mode is Objective.TIME:
        return t_w + t_c
    if mode is Objective.ENERGY:
        return station.curve.increment(t_c, beta) / eta
    return carbon_footprint(station, beta, t_c, tau_arrival + t_w, eta)
