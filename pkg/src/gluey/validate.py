"""Randomized cross-validation suites.

Each suite checks one component against an independent oracle or an
exact bound: the dual-ascent projection against brute-force active-set
enumeration, the neighbor grid against the all-pairs scan, KKT residuals
of solved instances, and the velocity/multiplier bounds of plane runs.
Shared by the ``gluey validate`` command and the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ParticleState, SparseGradientRow, distance_gradient
from .neighbors import GridParams, brute_force_neighbors, find_neighbors
from .plane import PiecewiseConstantForce, PlaneTrajectory, RoughParams, \
    run_plane_scenario
from .projection import (ConstraintRow, ProjectionError, RowKind,
                         SolverOptions, brute_force_project, kkt_residuals,
                         m_norm, project_velocities)

__all__ = [
    "SuiteResult",
    "grid_oracle_suite",
    "kkt_suite",
    "lemma_suite",
    "nonexpansion_suite",
    "plane_invariant_report",
    "projection_oracle_suite",
    "random_projection_instance",
    "run_suites",
]


@dataclass
class SuiteResult:
    name: str
    passed: bool
    n_cases: int
    worst: float
    details: str = ""


def random_projection_instance(rng, max_particles: int = 5,
                               max_rows: int = 6,
                               all_inequality: bool = False,
                               nonnegative_offsets: bool = False):
    """Random small projection instance (v_star, masses, rows, h).

    Rows mix particle/particle gradients of a random sphere configuration
    with single-entry obstacle-like rows; offsets are the actual gaps
    (clipped to >= 0 when requested).
    """
    n = int(rng.integers(2, max_particles + 1))
    positions = rng.uniform(-1.0, 1.0, size=(n, 3))
    radii = rng.uniform(0.1, 0.35, size=n)
    masses = rng.uniform(0.5, 2.0, size=n)
    state = ParticleState(positions, np.zeros((n, 3)), radii, masses)
    h = float(rng.uniform(0.05, 0.2))
    n_rows = int(rng.integers(1, max_rows + 1))
    pair_pool = [(i, j) for i in range(n) for j in range(i + 1, n)]
    rng.shuffle(pair_pool)
    rows = []
    for k in range(n_rows):
        if pair_pool and rng.random() < 0.7:
            i, j = pair_pool.pop()
            grad = distance_gradient(state, i, j)
            pair_id = (i, j)
        else:
            i = int(rng.integers(0, n))
            normal = rng.normal(size=3)
            normal /= np.linalg.norm(normal)
            offset = float(rng.uniform(-0.2, 0.8))
            grad = SparseGradientRow(entries=[(i, normal)], offset=offset)
            pair_id = (i, n + k)
        if nonnegative_offsets:
            grad.offset = abs(grad.offset)
        kind = RowKind.INEQUALITY
        if not all_inequality and rng.random() < 0.3:
            kind = RowKind.EQUALITY
        rows.append(ConstraintRow(row=grad, kind=kind, pair_id=pair_id))
    v_star = rng.normal(0.0, 2.0, size=3 * n)
    return v_star, masses, rows, h


def projection_oracle_suite(n_instances: int = 200, seed: int = 2024,
                            tol: float = 1e-8,
                            opts: SolverOptions | None = None,
                            max_particles: int = 5,
                            max_rows: int = 6) -> SuiteResult:
    """Dual ascent vs brute-force enumeration on random instances."""
    rng = np.random.default_rng(seed)
    if opts is None:
        opts = SolverOptions(uzawa_omega=1.8, uzawa_tol=1e-11,
                             uzawa_max_iters=200_000)
    worst = 0.0
    failures = []
    for case in range(n_instances):
        v_star, masses, rows, h = random_projection_instance(
            rng, max_particles, max_rows)
        try:
            uz = project_velocities(v_star, masses, rows, h, opts)
        except ProjectionError:
            failures.append(case)
            worst = math.inf
            continue
        bf = brute_force_project(v_star, masses, rows, h)
        dist = m_norm(uz.velocities - bf.velocities, masses)
        rep = uz.residuals
        res = max(rep.max_primal_violation, rep.max_dual_violation,
                  rep.max_complementarity, rep.stationarity_residual)
        worst = max(worst, dist, res)
        if dist > tol or res > tol:
            failures.append(case)
    return SuiteResult("projection", not failures, n_instances, worst,
                       f"failing cases: {failures[:5]}" if failures else "")


def nonexpansion_suite(n_instances: int = 200, seed: int = 2025,
                       opts: SolverOptions | None = None) -> SuiteResult:
    """With only inequality rows and non-negative offsets, the origin is
    admissible, so the projection cannot expand the M-norm."""
    rng = np.random.default_rng(seed)
    worst = -math.inf
    failures = []
    for case in range(n_instances):
        v_star, masses, rows, h = random_projection_instance(
            rng, all_inequality=True, nonnegative_offsets=True)
        try:
            res = project_velocities(v_star, masses, rows, h, opts)
        except ProjectionError:
            failures.append(case)
            worst = math.inf
            continue
        growth = m_norm(res.velocities, masses) - m_norm(v_star, masses)
        worst = max(worst, growth)
        if growth > 1e-12:
            failures.append(case)
    return SuiteResult("nonexpansion", not failures, n_instances, worst,
                       f"failing cases: {failures[:5]}" if failures else "")


def kkt_suite(n_instances: int = 100, seed: int = 2026, tol: float = 1e-8,
              opts: SolverOptions | None = None) -> SuiteResult:
    """All KKT residuals of solved random instances stay below tolerance."""
    rng = np.random.default_rng(seed)
    if opts is None:
        opts = SolverOptions(uzawa_omega=1.8, uzawa_tol=1e-11,
                             uzawa_max_iters=200_000)
    worst = 0.0
    failures = []
    for case in range(n_instances):
        v_star, masses, rows, h = random_projection_instance(rng)
        try:
            res = project_velocities(v_star, masses, rows, h, opts)
        except ProjectionError:
            failures.append(case)
            worst = math.inf
            continue
        rep = kkt_residuals(res, v_star, masses, rows, h)
        bad = max(rep.max_primal_violation, rep.max_dual_violation,
                  rep.max_complementarity, rep.stationarity_residual)
        worst = max(worst, bad)
        if bad > tol:
            failures.append(case)
    return SuiteResult("kkt", not failures, n_instances, worst,
                       f"failing cases: {failures[:5]}" if failures else "")


def grid_oracle_suite(n_configs: int = 20, n_particles: int = 400,
                      seed: int = 2027) -> SuiteResult:
    """Cell grid equals the all-pairs scan, for several cell sizes."""
    rng = np.random.default_rng(seed)
    d_neigh = 0.05
    mismatches = 0
    for _ in range(n_configs):
        n = n_particles
        state = ParticleState(rng.uniform(0, 1, (n, 3)), np.zeros((n, 3)),
                              rng.uniform(0.005, 0.015, n), np.ones(n))
        expected = brute_force_neighbors(state, d_neigh)
        for factor in (1.1, 2.0, 5.0):
            params = GridParams(cell_size=factor * d_neigh, d_neigh=d_neigh)
            got = find_neighbors(state, params).pairs
            if got != expected:
                mismatches += 1
    return SuiteResult("grid", mismatches == 0, n_configs, float(mismatches),
                       f"{mismatches} mismatching builds" if mismatches else "")


def plane_invariant_report(traj: PlaneTrajectory, force,
                           rough: RoughParams = RoughParams(),
                           u0: float | None = None) -> dict:
    """Exact bounds and identities of one plane run.

    Returns slacks (negative = violated) of the velocity sup bound, the
    velocity variation bound and the multiplier l1 bound, the worst
    complementarity product |q gamma|, and the worst residual of the
    discrete force balance m du/h = m f + lambda_tilde on the steps where
    it must hold exactly (unclamped; with radius scaling also excluding
    take-off steps).
    """
    T = float(traj.t[-1])
    u0 = float(traj.u[0]) if u0 is None else u0
    m = traj.m
    f_l1 = force.abs_integral(0.0, T)
    var = traj.variation()
    slack_sup = (abs(u0) + f_l1) - float(np.max(np.abs(traj.u)))
    slack_var = (abs(u0) + 8.0 * f_l1) - var
    slack_l1 = (m * var + f_l1) - traj.multiplier_l1()
    comp = float(np.max(np.abs(traj.q * traj.gamma)))
    worst_fpd = 0.0
    for k in range(1, len(traj.t)):
        gamma_prev, gamma_new = traj.gamma[k - 1], traj.gamma[k]
        clamped = math.isfinite(rough.gamma_min) and gamma_new == rough.gamma_min
        took_off = gamma_new == 0.0 and gamma_prev < 0.0
        if clamped or (took_off and rough.use_radius_scaling):
            continue
        f_n = force.interval_average(traj.t[k - 1], traj.t[k]) \
            if isinstance(force, PiecewiseConstantForce) \
            else force(0.5 * (traj.t[k - 1] + traj.t[k]))
        res = m * (traj.u[k] - traj.u[k - 1]) / traj.h - m * f_n \
            - traj.lam_tilde[k]
        worst_fpd = max(worst_fpd, abs(res))
    return {
        "velocity_sup_slack": slack_sup,
        "variation_slack": slack_var,
        "multiplier_l1_slack": slack_l1,
        "max_q_gamma": comp,
        "max_fpd_residual": worst_fpd,
        "q_min": float(np.min(traj.q)),
        "gamma_max": float(np.max(traj.gamma)),
    }


def _random_force(rng) -> PiecewiseConstantForce:
    k = int(rng.integers(1, 5))
    times = np.concatenate(([0.0], np.sort(rng.uniform(0.1, 2.9, k - 1))))
    values = rng.uniform(-5.0, 5.0, k)
    return PiecewiseConstantForce(tuple(times), tuple(values))


def lemma_suite(n_runs: int = 30, seed: int = 2028) -> SuiteResult:
    """Velocity and multiplier bounds hold exactly on random plane runs."""
    rng = np.random.default_rng(seed)
    worst = math.inf
    failures = []
    for case in range(n_runs):
        force = _random_force(rng)
        rough = RoughParams(
            gamma_min=float(rng.choice([-math.inf, -1.0, -0.2, 0.0])),
            use_radius_scaling=bool(rng.random() < 0.5))
        q0 = float(rng.uniform(0.1, 1.5))
        u0 = float(rng.uniform(-2.0, 2.0))
        m = float(rng.uniform(0.5, 3.0))
        traj = run_plane_scenario(q0, u0, m, force, T=3.0,
                                  h=float(rng.choice([1e-3, 2e-3])),
                                  rough=rough, r=float(rng.uniform(0.5, 2.0)))
        rep = plane_invariant_report(traj, force, rough)
        scale = 1.0 + abs(u0) + force.abs_integral(0.0, 3.0)
        ok = (rep["velocity_sup_slack"] >= -1e-12 * scale
              and rep["variation_slack"] >= -1e-12 * scale
              and rep["multiplier_l1_slack"] >= -1e-12 * scale * max(m, 1.0)
              and rep["max_q_gamma"] <= 1e-12
              and rep["q_min"] >= 0.0 and rep["gamma_max"] <= 0.0)
        worst = min(worst, rep["velocity_sup_slack"], rep["variation_slack"],
                    rep["multiplier_l1_slack"])
        if not ok:
            failures.append(case)
    return SuiteResult("lemmas", not failures, n_runs, worst,
                       f"failing cases: {failures[:5]}" if failures else "")


def run_suites(names=None, seed: int = 2024,
               opts: SolverOptions | None = None) -> list:
    """Run the named suites (all by default) and return their results."""
    available = {
        "projection": lambda: projection_oracle_suite(seed=seed, opts=opts),
        "nonexpansion": lambda: nonexpansion_suite(seed=seed + 1, opts=opts),
        "kkt": lambda: kkt_suite(seed=seed + 2, opts=opts),
        "grid": lambda: grid_oracle_suite(seed=seed + 3),
        "lemmas": lambda: lemma_suite(seed=seed + 4),
    }
    names = list(available) if not names else list(names)
    unknown = [n for n in names if n not in available]
    if unknown:
        raise ValueError(f"unknown suites {unknown}; "
                         f"available: {sorted(available)}")
    return [available[n]() for n in names]
