"""Single sphere above a plane with a gluey (adhesive) contact.

The state is the gap ``q >= 0``, the normal velocity ``u`` (positive away
from the plane) and the adhesion potential ``gamma <= 0``.  Each step
projects the a-priori velocity onto the admissible set

    K(q, gamma) = {v : q + h v >= 0}   if gamma = 0,
    K(q, gamma) = {v : q + h v  = 0}   if gamma < 0,

integrates gamma with the resulting multiplier, applies the unsticking
correction when gamma would cross zero, and optionally clamps gamma to a
roughness floor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PiecewiseConstantForce",
    "PlaneState",
    "PlaneTrajectory",
    "RoughParams",
    "admissible_project_scalar",
    "pushpull_closed_form",
    "pushpull_force",
    "run_plane_scenario",
    "step_average",
    "step_plane",
]


@dataclass(frozen=True)
class PiecewiseConstantForce:
    """Force that is constant on [times[k], times[k+1]) with value values[k].

    The last value extends to +inf; times must be strictly increasing.
    Interval averages and the integral of |f| are exact, which keeps the
    per-step force means and the velocity bounds free of quadrature error.
    """

    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) != len(self.values) or not self.times:
            raise ValueError("times and values must be non-empty, equal length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstantForce":
        return cls((0.0,), (float(value),))

    def __call__(self, t: float) -> float:
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.values[max(int(k), 0)]

    def _segments(self, t0: float, t1: float):
        """Yield (a, b, value) covering [t0, t1]."""
        k = max(int(np.searchsorted(self.times, t0, side="right")) - 1, 0)
        a = t0
        while a < t1:
            b = self.times[k + 1] if k + 1 < len(self.times) else t1
            b = min(b, t1)
            if b > a:
                yield a, b, self.values[k]
            a = b
            k += 1

    def interval_average(self, t0: float, t1: float) -> float:
        if t1 <= t0:
            raise ValueError("empty interval")
        total = sum((b - a) * v for a, b, v in self._segments(t0, t1))
        return total / (t1 - t0)

    def abs_integral(self, t0: float, t1: float) -> float:
        return sum((b - a) * abs(v) for a, b, v in self._segments(t0, t1))


def step_average(force, t0: float, t1: float) -> float:
    """Mean of the force over one step: exact for piecewise-constant
    forces, midpoint quadrature for plain callables."""
    if isinstance(force, PiecewiseConstantForce):
        return force.interval_average(t0, t1)
    return float(force(0.5 * (t0 + t1)))


def pushpull_force() -> PiecewiseConstantForce:
    """The push-pull forcing: f = -2 until t = 2, then f = +2."""
    return PiecewiseConstantForce((0.0, 2.0), (-2.0, 2.0))


@dataclass(frozen=True)
class RoughParams:
    """Roughness options: floor on gamma and radius scaling of its rate.

    ``gamma_min = -inf`` recovers the smooth model.  With
    ``use_radius_scaling`` the adhesion potential evolves with rate
    -lambda / r**2 instead of -lambda.
    """

    gamma_min: float = -math.inf
    use_radius_scaling: bool = False

    def __post_init__(self):
        if self.gamma_min > 0:
            raise ValueError("gamma_min must be <= 0")


@dataclass
class PlaneState:
    """Gap, velocity, adhesion potential and last multiplier of one sphere."""

    q: float
    u: float
    gamma: float = 0.0
    lam: float = 0.0
    m: float = 1.0
    r: float = 1.0
    lam_tilde: float = 0.0   # effective multiplier -(d gamma)/h (r^2-scaled if enabled)

    def __post_init__(self):
        if self.m <= 0 or self.r <= 0:
            raise ValueError("mass and radius must be positive")
        if self.q < 0:
            raise ValueError(f"gap must be non-negative, got {self.q}")
        if self.gamma > 0:
            raise ValueError(f"gamma must be non-positive, got {self.gamma}")
        if self.q * self.gamma != 0.0:
            raise ValueError("gap and gamma cannot both be nonzero")


def admissible_project_scalar(u_star: float, q: float, gamma: float,
                              h: float, m: float) -> tuple[float, float]:
    """Project the a-priori velocity onto the admissible set.

    Returns ``(u, lam)`` where ``lam = m (u - u_star) / h`` is the
    contact multiplier (non-negative whenever gamma = 0).
    """
    if h <= 0:
        raise ValueError("time step must be positive")
    if q < 0 or gamma > 0:
        raise ValueError("requires q >= 0 and gamma <= 0")
    if gamma < 0:
        u = -q / h
    else:
        u = max(u_star, -q / h)
    return u, m * (u - u_star) / h


def _advance(q, u, gamma, m, r, f_avg, h, gamma_min, radius_scaling):
    """One step on raw floats; returns (q, u, gamma, lam, lam_tilde).

    The gap is set to exactly 0.0 when the contact constraint is active,
    so that q * gamma = 0 holds to the bit.
    """
    u_half = u + h * f_avg
    active = gamma < 0 or -q / h >= u_half
    u_bar = -q / h if active else u_half
    lam = m * (u_bar - u_half) / h
    rate = h / (r * r) if radius_scaling else h
    gamma_bar = gamma - rate * lam
    if gamma_bar > 0:
        # The sphere took off inside the step: gamma had integrated the
        # force past zero, hand the excess back to the velocity.
        u_new, gamma_new, took_off = gamma_bar / m, 0.0, True
    else:
        u_new, gamma_new, took_off = u_bar, gamma_bar, False
    if gamma_new < gamma_min:
        gamma_new = gamma_min
    q_new = q + h * u_new if (took_off or not active) else 0.0
    lam_tilde = -(gamma_new - gamma) / rate
    return q_new, u_new, gamma_new, lam, lam_tilde


def step_plane(state: PlaneState, f_avg: float, h: float,
               rough: RoughParams = RoughParams()) -> PlaneState:
    """Advance one step: a-priori velocity, projection, gamma update,
    unsticking correction, roughness clamp, gap update."""
    if h <= 0:
        raise ValueError("time step must be positive")
    q, u, gamma, lam, lam_tilde = _advance(
        state.q, state.u, state.gamma, state.m, state.r, f_avg, h,
        rough.gamma_min, rough.use_radius_scaling)
    return PlaneState(q=q, u=u, gamma=gamma, lam=lam, m=state.m, r=state.r,
                      lam_tilde=lam_tilde)


@dataclass
class PlaneTrajectory:
    """Discrete trajectory of a plane run, one entry per step boundary."""

    t: np.ndarray
    q: np.ndarray
    u: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    lam_tilde: np.ndarray
    m: float = 1.0
    r: float = 1.0
    h: float = field(default=0.0)

    def hitting_time(self, tol: float = 1e-12):
        """First time the gap reaches zero, or None."""
        hits = np.flatnonzero(self.q <= tol)
        return float(self.t[hits[0]]) if hits.size else None

    def unsticking_time(self, tol: float = 1e-12):
        """First time the gap reopens after having reached zero, or None."""
        hits = np.flatnonzero(self.q <= tol)
        if not hits.size:
            return None
        after = np.flatnonzero(self.q[hits[0]:] > tol)
        return float(self.t[hits[0] + after[0]]) if after.size else None

    def variation(self) -> float:
        """Total variation of the velocity, summed from the second step on."""
        return float(np.sum(np.abs(np.diff(self.u[1:]))))

    def multiplier_l1(self) -> float:
        """Time-weighted l1 norm of the effective multiplier."""
        return float(self.h * np.sum(np.abs(self.lam_tilde[1:])))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,q,u,gamma,lambda\n")
            for k in range(len(self.t)):
                fh.write(f"{self.t[k]!r},{self.q[k]!r},{self.u[k]!r},"
                         f"{self.gamma[k]!r},{self.lam[k]!r}\n")


def run_plane_scenario(q0: float, u0: float, m: float, force, T: float,
                       h: float, rough: RoughParams = RoughParams(),
                       r: float = 1.0) -> PlaneTrajectory:
    """Run the plane stepper from (q0, u0, gamma=0) over [0, T].

    ``force`` is a callable t -> f or a :class:`PiecewiseConstantForce`;
    per-step means follow :func:`step_average`.
    """
    if q0 <= 0:
        raise ValueError("initial gap must be positive")
    if h <= 0 or T <= 0:
        raise ValueError("T and h must be positive")
    n = max(int(round(T / h)), 1)
    t = np.arange(n + 1) * h
    q = np.empty(n + 1)
    u = np.empty(n + 1)
    gamma = np.empty(n + 1)
    lam = np.zeros(n + 1)
    lam_tilde = np.zeros(n + 1)
    q[0], u[0], gamma[0] = q0, u0, 0.0
    qk, uk, gk = float(q0), float(u0), 0.0
    for k in range(n):
        f_avg = step_average(force, t[k], t[k + 1])
        qk, uk, gk, lk, ltk = _advance(qk, uk, gk, m, r, f_avg, h,
                                       rough.gamma_min,
                                       rough.use_radius_scaling)
        q[k + 1], u[k + 1], gamma[k + 1] = qk, uk, gk
        lam[k + 1], lam_tilde[k + 1] = lk, ltk
    return PlaneTrajectory(t=t, q=q, u=u, gamma=gamma, lam=lam,
                           lam_tilde=lam_tilde, m=m, r=r, h=h)


def pushpull_closed_form(t):
    """Exact solution of the push-pull run (q0=1, u0=0, m=1, f=-2 then +2).

    Free fall q = 1 - t^2 until the hit at t = 1, where gamma jumps to the
    impact momentum -2; gamma then integrates the force (slope -2, then +2
    after the force reversal at t = 2) and releases the sphere at t = 4,
    after which q = (t - 4)^2.  Returns ``(q, gamma)`` arrays.
    """
    t = np.asarray(t, dtype=float)
    q = np.where(t < 1.0, 1.0 - t * t, np.where(t <= 4.0, 0.0, (t - 4.0) ** 2))
    gamma = np.where(
        t < 1.0, 0.0,
        np.where(t < 2.0, -2.0 - 2.0 * (t - 1.0),
                 np.where(t < 4.0, -4.0 + 2.0 * (t - 2.0), 0.0)))
    return q, gamma
