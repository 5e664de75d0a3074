"""Reference solvers for the lubrication interaction of a sphere and a plane.

The drag on a sphere of radius r at gap q moving at normal velocity u in
a fluid of viscosity mu is -6 pi mu r^2 u / q.  Two references are
provided for validating the gluey limit model: the full second-order ODE

    m q'' = -6 pi mu r^2 q' / q + m f,

whose solutions never reach q = 0 in finite time, and the inertialess
quasi-static balance where the drag and the external force cancel at
every instant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .plane import PiecewiseConstantForce, step_average

__all__ = [
    "GapTrajectory",
    "StepUnderflow",
    "integrate_lubrication_ode",
    "macroscopic_contact_times",
    "quasistatic_reference",
]

DRAG_COEFF = 6.0 * math.pi


class StepUnderflow(RuntimeError):
    """The gap fell below the configured floor; near-contact is too stiff."""

    def __init__(self, time_reached: float, gap: float, floor: float):
        self.time_reached = time_reached
        self.gap = gap
        super().__init__(
            f"gap {gap:.3e} fell below floor {floor:.3e} at t = {time_reached:.6g}")


@dataclass
class GapTrajectory:
    """Sampled gap trajectory of a reference run."""

    t: np.ndarray
    q: np.ndarray
    u: np.ndarray


def _breakpoints(force, t_end):
    if isinstance(force, PiecewiseConstantForce):
        return [bt for bt in force.times if 0.0 < bt < t_end]
    return []


def integrate_lubrication_ode(q0: float, u0: float, mu: float, r: float,
                              m: float, force, T: float, h: float,
                              q_floor: float = 1e-14) -> GapTrajectory:
    """Integrate the singular lubrication ODE with adaptive substeps.

    Heun (explicit second order) inside each output step of size ``h``,
    halving the substep whenever the relative gap change |h u / q| would
    exceed 0.1 or the explicit drag update would be unstable.  Raises
    :class:`StepUnderflow` if the gap falls below ``q_floor``.
    """
    if q0 <= 0 or mu <= 0 or r <= 0 or m <= 0:
        raise ValueError("q0, mu, r, m must be positive")
    if h <= 0 or T <= 0:
        raise ValueError("T and h must be positive")
    c = DRAG_COEFF * mu * r * r / m

    def accel(q, u, f):
        return f - c * u / q

    n = max(int(round(T / h)), 1)
    t_out = np.arange(n + 1) * h
    q_out = np.empty(n + 1)
    u_out = np.empty(n + 1)
    q_out[0], u_out[0] = q0, u0
    breaks = _breakpoints(force, n * h)
    q, u = float(q0), float(u0)
    for k in range(n):
        tau, t_end = t_out[k], t_out[k + 1]
        while tau < t_end - 1e-12 * h:
            dt = t_end - tau
            # do not straddle a force discontinuity
            for bt in breaks:
                if tau < bt < tau + dt:
                    dt = bt - tau
                    break
            # substep control: relative gap change and drag stability
            while abs(dt * u / q) > 0.1 or dt * c / q > 0.5:
                dt *= 0.5
                if dt < 1e-15 * h:
                    raise StepUnderflow(tau, q, q_floor)
            f0 = float(force(tau))
            k1q, k1u = u, accel(q, u, f0)
            q_e, u_e = q + dt * k1q, u + dt * k1u
            if q_e <= q_floor:
                raise StepUnderflow(tau, q_e, q_floor)
            f1 = float(force(tau + dt))
            k2q, k2u = u_e, accel(q_e, u_e, f1)
            q = q + 0.5 * dt * (k1q + k2q)
            u = u + 0.5 * dt * (k1u + k2u)
            if q <= q_floor:
                raise StepUnderflow(tau, q, q_floor)
            tau += dt
        q_out[k + 1], u_out[k + 1] = q, u
    return GapTrajectory(t=t_out, q=q_out, u=u_out)


def quasistatic_reference(q0: float, mu: float, r: float, force, T: float,
                          h: float) -> GapTrajectory:
    """Inertialess reference: drag balances the force at every step.

    The balance -6 pi mu r^2 u / q + f = 0 gives u = q f / (6 pi mu r^2);
    the gap is advanced explicitly.
    """
    if q0 <= 0 or mu <= 0 or r <= 0:
        raise ValueError("q0, mu, r must be positive")
    if h <= 0 or T <= 0:
        raise ValueError("T and h must be positive")
    c = DRAG_COEFF * mu * r * r
    n = max(int(round(T / h)), 1)
    t = np.arange(n + 1) * h
    q = np.empty(n + 1)
    u = np.empty(n + 1)
    q[0] = q0
    u[0] = q0 * float(force(0.0)) / c
    qk = float(q0)
    for k in range(n):
        f = step_average(force, t[k], t[k + 1])
        uk = qk * f / c
        qk = qk + h * uk
        q[k + 1], u[k + 1] = qk, uk
    return GapTrajectory(t=t, q=q, u=u)


def macroscopic_contact_times(t, q) -> tuple[float, float]:
    """Halfway-crossing times bracketing the near-contact episode.

    The approach time is the first crossing of the level halfway between
    the initial gap and the run minimum; the release time is the last
    time the gap sits below the level halfway between the minimum and the
    final gap.  On a gluey run (minimum exactly 0) these reduce to the
    crossings of q0/2 and q(T)/2.  Crossings are linearly interpolated
    between samples.
    """
    t = np.asarray(t, dtype=float)
    q = np.asarray(q, dtype=float)
    k_min = int(np.argmin(q))
    q_min = q[k_min]
    level_in = 0.5 * (q[0] + q_min)
    level_out = 0.5 * (q[-1] + q_min)

    def cross_down(idx_range, level):
        for k in idx_range:
            if q[k] > level >= q[k + 1]:
                w = (q[k] - level) / (q[k] - q[k + 1])
                return float(t[k] + w * (t[k + 1] - t[k]))
        return None

    t_in = cross_down(range(0, k_min + 1), level_in)
    t_out = None
    for k in range(len(q) - 2, k_min - 1, -1):
        if q[k] <= level_out < q[k + 1]:
            w = (level_out - q[k]) / (q[k + 1] - q[k])
            t_out = float(t[k] + w * (t[k + 1] - t[k]))
            break
    if t_in is None:
        t_in = float(t[k_min])
    if t_out is None:
        t_out = float(t[k_min])
    return t_in, t_out
