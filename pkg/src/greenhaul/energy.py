"""Per-segment power and energy functions plus the speed-planning primitive.

A road segment carries a cubic power model ``p(r) = a0 + a1 r + a2 r^2 + a3 r^3``
(kW as a function of speed in km/h).  Traversing the segment in time ``t``
at constant speed consumes ``energy(t) = t * p(D / t)`` kWh, which is convex
in ``t`` whenever the power model is convex on the admissible speed range.
Downhill segments may have negative power (regenerative braking), so
energies can be negative.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError

_BOUND_SLACK = 1e-9


def power_rate(segment, speed: float) -> float:
    """Power draw (kW) at constant ``speed`` km/h; speed must respect the segment limits."""
    lo, hi = segment.speed_lb, segment.speed_ub
    if speed < lo - _BOUND_SLACK * max(1.0, hi) or speed > hi + _BOUND_SLACK * max(1.0, hi):
        raise DomainError(f"speed {speed} outside [{lo}, {hi}] on segment {segment.id}")
    a0, a1, a2, a3 = segment.power_poly
    return a0 + speed * (a1 + speed * (a2 + speed * a3))


def edge_energy(segment, t: float) -> float:
    """Energy (kWh) to traverse the segment in ``t`` hours at constant speed."""
    _check_time(segment, t)
    return t * power_rate(segment, segment.length_km / t)


def edge_energy_array(segment, t):
    """Vectorized :func:`edge_energy` (inputs assumed within bounds)."""
    t = np.asarray(t, dtype=float)
    a0, a1, a2, a3 = segment.power_poly
    d = segment.length_km
    return a0 * t + a1 * d + a2 * d * d / t + a3 * d ** 3 / (t * t)


def energy_derivative(segment, t: float) -> float:
    """d(energy)/dt at travel time ``t``; non-decreasing in ``t`` by convexity."""
    a0, _, a2, a3 = segment.power_poly
    d = segment.length_km
    return a0 - a2 * d * d / (t * t) - 2.0 * a3 * d ** 3 / t ** 3

def minimize_affine_tradeoff(segment, lam_time: float, lam_energy: float,
                             rel_tol: float = 1e-12) -> tuple[float, float]:
    """Minimize ``lam_time * t + lam_energy * energy(t)`` over the travel-time interval.

    Both multipliers must be non-negative, which makes the objective convex.
    The stationary point is found by safeguarded bisection on the derivative
    (monotone by convexity) and clamped to the interval.  Ties are broken
    toward the smaller travel time so repeated runs are reproducible.

    Returns ``(t_star, value)``.
    """
    if lam_time < 0 or lam_energy < 0:
        raise DomainError("trade-off multipliers must be non-negative")
    lo, hi = segment.t_lb, segment.t_ub

    def val(t: float) -> float:
        return lam_time * t + lam_energy * edge_energy(segment, t)

    if lam_energy == 0.0:
        # pure (possibly zero) time cost: fastest traversal wins ties
        return lo, lam_time * lo
    if hi - lo <= 0.0:
        return lo, val(lo)

    def grad(t: float) -> float:
        return lam_time + lam_energy * energy_derivative(segment, t)

    g_lo, g_hi = grad(lo), grad(hi)
    if g_lo >= 0.0:
        t_star = lo
    elif g_hi <= 0.0:
        t_star = hi
    else:
        a, b = lo, hi
        for _ in range(200):
            m = 0.5 * (a + b)
            if b - a <= rel_tol * (hi - lo):
                break
            if grad(m) >= 0.0:
                b = m
            else:
                a = m
        t_star = 0.5 * (a + b)
    # Safeguard: the analytic candidate must not lose to the endpoints.
    best_t, best_v = t_star, val(t_star)
    for t in (lo, hi):
        v = val(t)
        if v < best_v - 0.0 or (v == best_v and t < best_t):
            best_t, best_v = t, v
    return best_t, best_v


def min_energy(segment) -> float:
    """Minimum possible energy on the segment over admissible travel times."""
    _, v = minimize_affine_tradeoff(segment, 0.0, 1.0)
    return v


def _check_time(segment, t: float) -> None:
    lo, hi = segment.t_lb, segment.t_ub
    slack = _BOUND_SLACK * max(1.0, hi)
    if t < lo - slack or t > hi + slack:
        raise DomainError(f"travel time {t} outside [{lo}, {hi}] on segment {segment.id}")
