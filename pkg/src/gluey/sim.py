"""Multi-particle gluey time stepper.

One step: build the a-priori velocity, refresh the neighbor set and
carry the adhesion values, assemble the linearized constraint rows
(equality for glued pairs, inequality otherwise, obstacles evaluated at
their end-of-step pose), project in the mass-weighted norm, integrate
the adhesion potentials with the multipliers scaled by the pair
coefficient (r_i + r_j)^2 / (r_i^2 r_j^2) when radius scaling is on,
clamp them to [floor, 0], and advance the positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ParticleState
from .neighbors import GluedPairLost, GridParams, NeighborSet, find_neighbors
from .obstacles import ObstacleSet
from .projection import (ProjectionResult, RowKind, SolverOptions,
                         assemble_constraints, project_velocities)

__all__ = [
    "GammaFloor",
    "GlueLaw",
    "InitializationError",
    "RunMonitor",
    "SimFrame",
    "Simulation",
    "StepReport",
    "pair_rate_coeff",
    "run_simulation",
    "sample_positions",
    "step_multibody",
]

FEASIBILITY_TOL = 1e-6
MOMENTUM_TOL = 1e-8


class InitializationError(RuntimeError):
    """Could not place the requested particles without overlap."""


@dataclass(frozen=True)
class GammaFloor:
    """Floor policy for the adhesion potential.

    "smooth" puts no floor (-inf), "uniform" one common value, and
    "roughness" derives the pair floor 6 pi mu ln(r_s,i + r_s,j) from
    the roughness sizes (valid only when the sums stay <= 1).
    """

    policy: str = "smooth"
    value: float = -math.inf

    def __post_init__(self):
        if self.policy not in ("smooth", "uniform", "roughness"):
            raise ValueError(f"unknown gamma_min policy {self.policy!r}")
        if self.policy == "uniform" and self.value > 0:
            raise ValueError("uniform gamma floor must be <= 0")

    def floor_for(self, mu: float, rough_i: float, rough_j: float) -> float:
        if self.policy == "smooth":
            return -math.inf
        if self.policy == "uniform":
            return self.value
        s = rough_i + rough_j
        if s <= 0.0:
            return -math.inf
        if s > 1.0:
            raise ValueError(
                f"roughness-derived floor positive (r_s sum {s} > 1)")
        return 6.0 * math.pi * mu * math.log(s)


@dataclass
class GlueLaw:
    """Adhesion bookkeeping constants: viscosity enters only through the
    roughness-derived floor; trajectories otherwise depend on the sign of
    gamma alone."""

    mu: float = 1.0
    use_radius_scaling: bool = False
    floor: GammaFloor = field(default_factory=GammaFloor)

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    def validate_roughness(self, state: ParticleState,
                           obstacles: ObstacleSet | None) -> None:
        if self.floor.policy != "roughness":
            return
        rs = np.sort(state.roughness_sizes)[::-1]
        worst = rs[0] + rs[1] if len(rs) >= 2 else 0.0
        if obstacles is not None and obstacles.units and len(rs) >= 1:
            worst = max(worst, rs[0] + max(u.roughness for u in obstacles.units))
        if worst > 1.0:
            raise ValueError(
                f"roughness sizes too large for the log floor (pair sum {worst} > 1)")


def pair_rate_coeff(ri: float, rj: float) -> float:
    """Radius coefficient (r_i + r_j)^2 / (r_i^2 r_j^2) of the adhesion
    rate; obstacles with infinite radius give the plane limit 1/r_i^2."""
    if math.isinf(rj):
        return 1.0 / (ri * ri)
    if math.isinf(ri):
        return 1.0 / (rj * rj)
    return (ri + rj) ** 2 / (ri * ri * rj * rj)


def default_provider(state: ParticleState, f_avg: np.ndarray,
                     h: float) -> np.ndarray:
    """A-priori velocity without any contact interaction: V + h f."""
    return (state.velocities + h * f_avg).ravel()


@dataclass
class StepDiagnostics:
    n_rows: int = 0
    n_equality_rows: int = 0
    iterations: int = 0
    max_primal_violation: float = 0.0
    momentum_residual: float = 0.0
    min_pair_gap: float = math.inf
    min_obstacle_gap: float = math.inf
    gamma_min: float = 0.0
    gamma_max: float = 0.0
    max_speed: float = 0.0


@dataclass
class StepReport:
    state: ParticleState
    gammas: dict
    multipliers: dict
    rows: list
    projection: ProjectionResult
    diagnostics: StepDiagnostics
    neighbors: NeighborSet | None = None


def _min_pair_gap(state: ParticleState) -> float:
    n = state.count
    if n < 2:
        return math.inf
    pos = state.positions
    dist = np.linalg.norm(pos[None, :, :] - pos[:, None, :], axis=2)
    gap = dist - state.radii[None, :] - state.radii[:, None]
    ii, jj = np.triu_indices(n, k=1)
    return float(np.min(gap[ii, jj]))


def _min_obstacle_gap(state: ParticleState, obstacles: ObstacleSet | None,
                      t: float) -> float:
    if obstacles is None or not obstacles.units or state.count == 0:
        return math.inf
    worst = math.inf
    for unit in obstacles.units:
        gaps, _, _ = unit.gaps(state.positions, state.radii, t)
        worst = min(worst, float(np.min(gaps)))
    return worst


def step_multibody(state: ParticleState, gammas: dict, t: float, h: float, *,
                   grid: GridParams, obstacles: ObstacleSet | None = None,
                   law: GlueLaw | None = None, provider=None,
                   f_avg: np.ndarray | None = None,
                   opts: SolverOptions | None = None,
                   warm_start: dict | None = None,
                   takeoff_correction: bool = False,
                   built_at_step: int = 0) -> StepReport:
    """Advance the particle system by one step of size ``h`` from time ``t``.

    ``gammas`` maps pair ids to adhesion values (absent means 0);
    ``f_avg`` is the per-particle mean external acceleration over the
    step; ``provider`` computes the a-priori velocity from it (defaults
    to V + h f).  Returns the new state, adhesion map, multipliers and
    step diagnostics.
    """
    if h <= 0:
        raise ValueError("time step must be positive")
    law = law or GlueLaw()
    n = state.count
    if f_avg is None:
        f_avg = np.zeros((n, 3))
    f_avg = np.asarray(f_avg, dtype=float).reshape(n, 3)
    provider = provider or default_provider
    v_star = np.asarray(provider(state, f_avg, h), dtype=float).ravel()

    fresh = find_neighbors(state, grid, built_at_step)
    merged = {}
    for pair, g in gammas.items():
        if pair[1] < n:
            if g < 0 and pair not in fresh.pairs:
                raise GluedPairLost(
                    f"glued pair {pair} (gamma={g}) left the neighbor set")
        else:
            merged[pair] = g
    for pair in fresh.pairs:
        g = gammas.get(pair, 0.0)
        if g != 0.0:
            merged[pair] = g

    rows = assemble_constraints(state, merged, fresh.pairs, obstacles,
                                t + h, grid.d_neigh)
    proj = project_velocities(v_star, state.masses, rows, h, opts, warm_start)

    v_new = proj.velocities.copy()
    minv3 = np.repeat(1.0 / state.masses, 3)
    new_gammas: dict = {}
    multipliers: dict = {}
    obstacle_impulse = np.zeros(3)
    g_lo, g_hi = 0.0, 0.0
    for k, cr in enumerate(rows):
        lam = float(proj.multipliers[k])
        multipliers[cr.pair_id] = lam
        i, j = cr.pair_id
        if j < n:
            rj, rough_j = state.radii[j], state.roughness_sizes[j]
        else:
            unit = obstacles.units[j - n]
            rj, rough_j = unit.effective_radius, unit.roughness
        coeff = pair_rate_coeff(state.radii[i], rj) \
            if law.use_radius_scaling else 1.0
        g_bar = merged.get(cr.pair_id, 0.0) - h * coeff * lam
        if g_bar > 0.0:
            if takeoff_correction:
                # hand the clamped excess back as a separating impulse
                dv = g_bar / coeff
                for p, coef in cr.row.entries:
                    v_new[3 * p:3 * p + 3] += dv * coef * minv3[3 * p]
                if j >= n:
                    obstacle_impulse += dv * cr.row.entries[0][1]
            g_bar = 0.0
        floor = law.floor.floor_for(law.mu, state.roughness_sizes[i], rough_j)
        if g_bar < floor:
            g_bar = floor
        if g_bar != 0.0:
            new_gammas[cr.pair_id] = g_bar
            g_lo = min(g_lo, g_bar)
            g_hi = max(g_hi, g_bar)

    positions = state.positions + h * v_new.reshape(n, 3)
    new_state = ParticleState(positions, v_new.reshape(n, 3).copy(),
                              state.radii.copy(), state.masses.copy(),
                              state.roughness_sizes.copy(), state.planar)

    # momentum accounting: pair impulses cancel, obstacle rows do not
    for k, cr in enumerate(rows):
        if cr.pair_id[1] >= n:
            obstacle_impulse += h * proj.multipliers[k] * cr.row.entries[0][1]
    dp = ((new_state.velocities - state.velocities)
          * state.masses[:, None]).sum(axis=0)
    residual = dp - h * (f_avg * state.masses[:, None]).sum(axis=0) \
        - obstacle_impulse
    diag = StepDiagnostics(
        n_rows=len(rows),
        n_equality_rows=sum(r.kind == RowKind.EQUALITY for r in rows),
        iterations=proj.iterations,
        max_primal_violation=proj.residuals.max_primal_violation,
        momentum_residual=float(np.max(np.abs(residual))) if n else 0.0,
        min_pair_gap=_min_pair_gap(new_state),
        min_obstacle_gap=_min_obstacle_gap(new_state, obstacles, t + h),
        gamma_min=g_lo,
        gamma_max=g_hi,
        max_speed=float(np.max(np.linalg.norm(new_state.velocities, axis=1)))
        if n else 0.0,
    )
    return StepReport(state=new_state, gammas=new_gammas,
                      multipliers=multipliers, rows=rows, projection=proj,
                      diagnostics=diag, neighbors=fresh)


@dataclass
class RunMonitor:
    """Aggregated per-run invariant diagnostics (reported in manifests)."""

    steps: int = 0
    min_pair_gap: float = math.inf
    min_obstacle_gap: float = math.inf
    gamma_min: float = 0.0
    gamma_max: float = 0.0
    max_momentum_residual: float = 0.0
    max_primal_violation: float = 0.0
    n_equality_rows_total: int = 0
    total_iterations: int = 0
    max_speed: float = 0.0

    def update(self, diag: StepDiagnostics) -> None:
        self.steps += 1
        self.min_pair_gap = min(self.min_pair_gap, diag.min_pair_gap)
        self.min_obstacle_gap = min(self.min_obstacle_gap,
                                    diag.min_obstacle_gap)
        self.gamma_min = min(self.gamma_min, diag.gamma_min)
        self.gamma_max = max(self.gamma_max, diag.gamma_max)
        self.max_momentum_residual = max(self.max_momentum_residual,
                                         diag.momentum_residual)
        self.max_primal_violation = max(self.max_primal_violation,
                                        diag.max_primal_violation)
        self.n_equality_rows_total += diag.n_equality_rows
        self.total_iterations += diag.iterations
        self.max_speed = max(self.max_speed, diag.max_speed)

    def summary(self) -> dict:
        checks = {
            "feasibility": (min(self.min_pair_gap, self.min_obstacle_gap)
                            >= -FEASIBILITY_TOL),
            "gamma_nonpositive": self.gamma_max <= 0.0,
            "momentum_balance": self.max_momentum_residual <= MOMENTUM_TOL,
        }
        return {
            "steps": self.steps,
            "min_pair_gap": self.min_pair_gap,
            "min_obstacle_gap": self.min_obstacle_gap,
            "gamma_min": self.gamma_min,
            "gamma_max": self.gamma_max,
            "max_momentum_residual": self.max_momentum_residual,
            "max_primal_violation": self.max_primal_violation,
            "n_equality_rows_total": self.n_equality_rows_total,
            "total_iterations": self.total_iterations,
            "max_speed": self.max_speed,
            "checks": checks,
            "all_checks_pass": all(checks.values()),
        }


@dataclass
class SimFrame:
    """One emitted snapshot: particle state plus the adhesion network."""

    step: int
    t: float
    state: ParticleState
    gamma_records: list            # (i, j, gamma, gap) per assembled pair
    diagnostics: StepDiagnostics | None = None


def sample_positions(rng, count, radius_range, region_low, region_high,
                     obstacles: ObstacleSet | None, planar: bool,
                     max_attempts: int = 10_000):
    """Rejection-sample non-overlapping sphere positions inside a box.

    Radii are drawn uniformly from ``radius_range``; each particle gets
    ``max_attempts`` placement tries before :class:`InitializationError`.
    """
    lo = np.asarray(region_low, dtype=float)
    hi = np.asarray(region_high, dtype=float)
    radii = rng.uniform(radius_range[0], radius_range[1], size=count)
    positions = np.zeros((count, 3))
    for i in range(count):
        r = radii[i]
        placed = False
        for _ in range(max_attempts):
            p = rng.uniform(lo + r, np.maximum(hi - r, lo + r))
            if planar:
                p[2] = 0.0
            if i:
                gaps = (np.linalg.norm(positions[:i] - p, axis=1)
                        - radii[:i] - r)
                if np.min(gaps) < 0.0:
                    continue
            if obstacles is not None:
                ok = True
                for unit in obstacles.units:
                    g, _, inside = unit.gaps(p[None, :], np.array([r]), 0.0)
                    if g[0] < 0.0 or inside[0]:
                        ok = False
                        break
                if not ok:
                    continue
            positions[i] = p
            placed = True
            break
        if not placed:
            raise InitializationError(
                f"could not place particle {i} after {max_attempts} attempts")
    return positions, radii


class Simulation:
    """Configured multi-particle run; iterate :meth:`frames` to advance."""

    def __init__(self, config, provider=None):
        from .config import build_initial_state, build_obstacles  # cycle guard
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.obstacles = build_obstacles(config)
        self.state = build_initial_state(config, self.rng, self.obstacles)
        config.glue_law.validate_roughness(self.state, self.obstacles)
        self.gammas: dict = {}
        self.warm: dict = {}
        self.monitor = RunMonitor()
        self.provider = provider
        self.n_steps = max(int(round(config.horizon / config.h)), 0)

    def _gamma_records(self, report: StepReport, t_next: float) -> list:
        from .geometry import signed_distance
        n = report.state.count
        records = []
        for cr in report.rows:
            i, j = cr.pair_id
            g = report.gammas.get(cr.pair_id, 0.0)
            if j < n:
                gap = signed_distance(report.state.positions[i],
                                      report.state.radii[i],
                                      report.state.positions[j],
                                      report.state.radii[j])
            else:
                unit = self.obstacles.units[j - n]
                gaps, _, _ = unit.gaps(report.state.positions[i:i + 1],
                                       report.state.radii[i:i + 1], t_next)
                gap = float(gaps[0])
            records.append((i, j, g, gap))
        return records

    def frames(self):
        cfg = self.config
        yield SimFrame(step=0, t=0.0, state=self.state.copy(),
                       gamma_records=[], diagnostics=None)
        n = self.state.count
        gravity = np.broadcast_to(cfg.gravity, (n, 3))
        for k in range(self.n_steps):
            t = k * cfg.h
            report = step_multibody(
                self.state, self.gammas, t, cfg.h,
                grid=cfg.grid, obstacles=self.obstacles, law=cfg.glue_law,
                provider=self.provider, f_avg=gravity, opts=cfg.solver,
                warm_start=self.warm,
                takeoff_correction=cfg.takeoff_correction,
                built_at_step=k)
            self.state = report.state
            self.gammas = report.gammas
            self.warm = report.multipliers
            self.monitor.update(report.diagnostics)
            if (k + 1) % cfg.cadence == 0 or k + 1 == self.n_steps:
                yield SimFrame(step=k + 1, t=(k + 1) * cfg.h,
                               state=self.state.copy(),
                               gamma_records=self._gamma_records(
                                   report, (k + 1) * cfg.h),
                               diagnostics=report.diagnostics)


@dataclass
class RunResult:
    frames: list
    monitor: RunMonitor


def run_simulation(config, provider=None) -> RunResult:
    """Run a configured scenario to completion and collect all frames."""
    sim = Simulation(config, provider=provider)
    frames = list(sim.frames())
    return RunResult(frames=frames, monitor=sim.monitor)
