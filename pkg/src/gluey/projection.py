"""Velocity projection onto the discrete admissible set.

The step velocity solves

    min over V of  1/2 |V - V*|_M^2
    s.t.  offset_r + h row_r . V >= 0   (inequality, free pair)
          offset_r + h row_r . V  = 0   (equality, glued pair)

for sparse gradient rows assembled from neighbor pairs and obstacles.
The solver is dual ascent (Uzawa) on the multipliers, with Jacobi
(default, deterministic under concurrency) or Gauss-Seidel sweeps.  A
brute-force active-set enumeration provides an exact oracle for small
instances, and KKT residuals quantify solution quality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import ParticleState, SparseGradientRow, distance_gradient
from .neighbors import GluedPairLost
from .obstacles import ObstacleSet, ParticleInsideObstacle

__all__ = [
    "ConstraintRow",
    "InfeasibleConstraintsError",
    "KktReport",
    "ProjectionResult",
    "RowKind",
    "SolverOptions",
    "UzawaConvergenceError",
    "assemble_constraints",
    "brute_force_project",
    "evaluate_obstacle_constraint",
    "kkt_residuals",
    "m_norm",
    "project_velocities",
]


class RowKind(Enum):
    INEQUALITY = "inequality"
    EQUALITY = "equality"


@dataclass
class ConstraintRow:
    """One linearized constraint: gradient row, kind, and the pair it couples.

    ``pair_id`` is (i, j) with i < j for particle pairs and (i, N + k)
    for particle/obstacle pairs, k being the flattened obstacle index.
    """

    row: SparseGradientRow
    kind: RowKind
    pair_id: tuple


@dataclass
class KktReport:
    max_primal_violation: float = 0.0
    max_dual_violation: float = 0.0
    max_complementarity: float = 0.0
    stationarity_residual: float = 0.0


@dataclass
class ProjectionResult:
    velocities: np.ndarray
    multipliers: np.ndarray
    iterations: int
    residuals: KktReport


@dataclass
class SolverOptions:
    """Uzawa tuning knobs.

    ``step_rule`` selects the dual step size bound: "gershgorin" uses the
    max absolute row sum of the dual matrix h^2 G M^-1 G^T (tight, still
    a guaranteed spectral bound), "row_count" the coarser
    omega / (h^2 |row|^2_max max(1/m) R).  ``disable_dual_projection``
    is a fault-injection hook for the validation suites.
    """

    uzawa_omega: float = 1.0
    uzawa_tol: float = 1e-9
    uzawa_max_iters: int | None = None      # defaults to 100 * row count
    sweep_mode: str = "jacobi"              # "jacobi" | "gauss_seidel"
    step_rule: str = "gershgorin"           # "gershgorin" | "row_count"
    lambda_tol: float = 1e-10
    disable_dual_projection: bool = False

    def __post_init__(self):
        if self.sweep_mode not in ("jacobi", "gauss_seidel"):
            raise ValueError(f"unknown sweep_mode {self.sweep_mode!r}")
        if self.step_rule not in ("gershgorin", "row_count"):
            raise ValueError(f"unknown step_rule {self.step_rule!r}")


class ProjectionError(RuntimeError):
    pass


class UzawaConvergenceError(ProjectionError):
    """Dual ascent did not meet the tolerances within the iteration cap."""

    def __init__(self, message: str, report: KktReport, iterations: int):
        self.report = report
        self.iterations = iterations
        super().__init__(f"{message} after {iterations} sweeps: {report}")


class InfeasibleConstraintsError(ProjectionError):
    """The equality subsystem admits no velocity (conflicting glued rows)."""

    def __init__(self, rows: list, residuals=None):
        self.rows = rows
        self.residuals = residuals
        ids = [r.pair_id for r in rows]
        super().__init__(f"conflicting glued constraints on pairs {ids}")


def m_norm(v, masses) -> float:
    """Mass-weighted norm of a stacked velocity vector."""
    v = np.asarray(v, dtype=float).reshape(-1, 3)
    return float(np.sqrt(np.sum(np.asarray(masses) * np.sum(v * v, axis=1))))


def _build_matrix(rows, n3: int) -> sp.csr_matrix:
    data, ri, ci = [], [], []
    for k, cr in enumerate(rows):
        for p, coef in cr.row.entries:
            if not 0 <= 3 * p + 2 < n3:
                raise ValueError(f"row {k} touches particle {p} out of range")
            for a in range(3):
                ri.append(k)
                ci.append(3 * p + a)
                data.append(coef[a])
    return sp.csr_matrix((data, (ri, ci)), shape=(len(rows), n3))


def _dual_step_size(H: sp.csr_matrix, rows, masses, h: float,
                    opts: SolverOptions) -> float:
    if opts.step_rule == "row_count":
        g2 = max(sum(float(np.dot(c, c)) for _, c in cr.row.entries)
                 for cr in rows)
        bound = h * h * g2 * float(np.max(1.0 / masses)) * len(rows)
    else:
        bound = float(np.max(np.abs(H).sum(axis=1)))
    return opts.uzawa_omega / bound


def project_velocities(v_star, masses, rows, h: float,
                       opts: SolverOptions | None = None,
                       warm_start: dict | None = None) -> ProjectionResult:
    """Project the a-priori velocity onto the admissible set in the M-norm.

    Parameters
    ----------
    v_star : (3N,) stacked a-priori velocities
    masses : (N,) particle masses
    rows : list of ConstraintRow
    h : time step (scales the linearized constraints)
    opts : solver options; ``warm_start`` maps pair_id -> previous multiplier.

    Returns the unique minimizer with its multipliers; raises
    :class:`UzawaConvergenceError` or :class:`InfeasibleConstraintsError`
    on failure.
    """
    if h <= 0:
        raise ValueError("time step must be positive")
    opts = opts or SolverOptions()
    v_star = np.asarray(v_star, dtype=float).ravel()
    masses = np.asarray(masses, dtype=float).ravel()
    if v_star.size != 3 * masses.size:
        raise ValueError("v_star must stack 3 components per particle")
    if np.any(masses <= 0):
        raise ValueError("masses must be positive")
    n_rows = len(rows)
    if n_rows == 0:
        return ProjectionResult(v_star.copy(), np.zeros(0), 0, KktReport())

    G = _build_matrix(rows, v_star.size)
    d = np.array([cr.row.offset for cr in rows], dtype=float)
    eq = np.array([cr.kind == RowKind.EQUALITY for cr in rows])
    ineq = ~eq
    minv3 = np.repeat(1.0 / masses, 3)
    GT = G.T.tocsr()
    H = (G.multiply(minv3) @ GT).tocsr()
    H.data *= h * h
    s0 = d + h * (G @ v_star)
    rho = _dual_step_size(H, rows, masses, h, opts)

    lam = np.zeros(n_rows)
    if warm_start:
        for k, cr in enumerate(rows):
            lam[k] = warm_start.get(cr.pair_id, 0.0)
        if not opts.disable_dual_projection:
            lam[ineq] = np.maximum(lam[ineq], 0.0)

    tol_p = opts.uzawa_tol * (1.0 + float(np.max(np.abs(d))))
    max_iters = opts.uzawa_max_iters or 100 * n_rows
    it = 0
    d_lam = np.inf
    converged = False

    if opts.sweep_mode == "jacobi":
        while it < max_iters:
            slack = s0 + H @ lam
            primal = _primal_violation(slack, eq, ineq)
            if (primal <= tol_p
                    and d_lam <= opts.lambda_tol * (1.0 + np.max(np.abs(lam)))):
                converged = True
                break
            lam_new = lam - rho * slack
            if not opts.disable_dual_projection:
                lam_new[ineq] = np.maximum(lam_new[ineq], 0.0)
            d_lam = float(np.max(np.abs(lam_new - lam)))
            lam = lam_new
            it += 1
            if not np.all(np.isfinite(lam)):
                break
    else:
        hdiag = H.diagonal()
        indptr, indices, hdata = H.indptr, H.indices, H.data
        while it < max_iters:
            slack = s0 + H @ lam
            primal = _primal_violation(slack, eq, ineq)
            if (primal <= tol_p
                    and d_lam <= opts.lambda_tol * (1.0 + np.max(np.abs(lam)))):
                converged = True
                break
            d_lam = 0.0
            for r in range(n_rows):
                target = lam[r] - opts.uzawa_omega * slack[r] / hdiag[r]
                if ineq[r] and not opts.disable_dual_projection:
                    target = max(target, 0.0)
                delta = target - lam[r]
                if delta != 0.0:
                    lam[r] = target
                    lo, hi = indptr[r], indptr[r + 1]
                    slack[indices[lo:hi]] += hdata[lo:hi] * delta
                    d_lam = max(d_lam, abs(delta))
            it += 1
            if not np.all(np.isfinite(lam)):
                break

    velocities = v_star + h * minv3 * (GT @ lam)
    result = ProjectionResult(velocities, lam, it, KktReport())
    result.residuals = kkt_residuals(result, v_star, masses, rows, h)
    if not converged:
        bad = _infeasible_equalities(G, d, eq, rows, h, tol_p)
        if bad:
            raise InfeasibleConstraintsError(bad)
        raise UzawaConvergenceError("Uzawa did not converge",
                                    result.residuals, it)
    return result


def _primal_violation(slack, eq, ineq) -> float:
    viol = 0.0
    if eq.any():
        viol = float(np.max(np.abs(slack[eq])))
    if ineq.any():
        viol = max(viol, float(np.max(-np.minimum(slack[ineq], 0.0))))
    return viol


def _infeasible_equalities(G, d, eq, rows, h, tol) -> list:
    """Least-squares certificate: can the equality rows all be closed?"""
    if not eq.any():
        return []
    Ge = G[np.flatnonzero(eq)]
    de = d[eq]
    sol = spla.lsqr(Ge, -de / h, atol=1e-14, btol=1e-14)[0]
    res = de + h * (Ge @ sol)
    if float(np.max(np.abs(res))) <= max(tol, 1e-10 * (1 + np.max(np.abs(de)))):
        return []
    eq_rows = [rows[k] for k in np.flatnonzero(eq)]
    worst = np.abs(res) > tol
    return [r for r, w in zip(eq_rows, worst) if w]


def kkt_residuals(result: ProjectionResult, v_star, masses, rows,
                  h: float) -> KktReport:
    """Primal/dual/complementarity/stationarity residuals of a solution."""
    if not rows:
        return KktReport()
    v_star = np.asarray(v_star, dtype=float).ravel()
    masses = np.asarray(masses, dtype=float).ravel()
    G = _build_matrix(rows, v_star.size)
    d = np.array([cr.row.offset for cr in rows], dtype=float)
    eq = np.array([cr.kind == RowKind.EQUALITY for cr in rows])
    ineq = ~eq
    V = result.velocities
    lam = result.multipliers
    slack = d + h * (G @ V)
    dual = float(np.max(-np.minimum(lam[ineq], 0.0))) if ineq.any() else 0.0
    comp = (float(np.max(np.abs(lam[ineq] * slack[ineq])))
            if ineq.any() else 0.0)
    m3 = np.repeat(masses, 3)
    stat = float(np.max(np.abs(m3 * (V - v_star) - h * (G.T @ lam))))
    return KktReport(max_primal_violation=_primal_violation(slack, eq, ineq),
                     max_dual_violation=dual,
                     max_complementarity=comp,
                     stationarity_residual=stat)


def brute_force_project(v_star, masses, rows, h: float,
                        limit: int = 20) -> ProjectionResult:
    """Exact minimizer by enumerating active subsets of inequality rows.

    Every subset is solved as an equality-constrained quadratic problem
    in closed form; the feasible, dual-feasible candidate with the
    smallest objective is returned.  Intended as an oracle: the row
    count is capped at ``limit``.
    """
    if len(rows) > limit:
        raise ValueError(f"brute force limited to {limit} rows, got {len(rows)}")
    if h <= 0:
        raise ValueError("time step must be positive")
    v_star = np.asarray(v_star, dtype=float).ravel()
    masses = np.asarray(masses, dtype=float).ravel()
    n_rows = len(rows)
    if n_rows == 0:
        return ProjectionResult(v_star.copy(), np.zeros(0), 0, KktReport())
    A = _build_matrix(rows, v_star.size).toarray()
    d = np.array([cr.row.offset for cr in rows], dtype=float)
    eq_idx = [k for k, cr in enumerate(rows) if cr.kind == RowKind.EQUALITY]
    in_idx = [k for k, cr in enumerate(rows) if cr.kind == RowKind.INEQUALITY]
    minv3 = np.repeat(1.0 / masses, 3)
    m3 = np.repeat(masses, 3)
    tol = 1e-9 * (1.0 + float(np.max(np.abs(d))))

    best = None
    best_obj = np.inf
    n_tried = 0
    for size in range(len(in_idx) + 1):
        for subset in combinations(in_idx, size):
            act = eq_idx + list(subset)
            n_tried += 1
            if not act:
                V = v_star.copy()
                lam_act = np.zeros(0)
            else:
                Aact = A[act]
                Hact = (h * h) * (Aact * minv3) @ Aact.T
                rhs = -(d[act] + h * (Aact @ v_star))
                try:
                    lam_act = np.linalg.solve(Hact, rhs)
                except np.linalg.LinAlgError:
                    lam_act, *_ = np.linalg.lstsq(Hact, rhs, rcond=None)
                if not np.allclose(Hact @ lam_act, rhs,
                                   atol=tol, rtol=1e-9):
                    continue    # this active set cannot be closed
                V = v_star + h * minv3 * (Aact.T @ lam_act)
            slack = d + h * (A @ V)
            ok = True
            for k in in_idx:
                if k in subset:
                    ok = ok and lam_act[act.index(k)] >= -tol
                else:
                    ok = ok and slack[k] >= -tol
            ok = ok and all(abs(slack[k]) <= tol for k in act)
            if not ok:
                continue
            dv = V - v_star
            obj = float(np.dot(m3 * dv, dv))
            if obj < best_obj - 1e-15:
                lam = np.zeros(n_rows)
                for pos, k in enumerate(act):
                    lam[k] = lam_act[pos]
                best, best_obj = (V, lam), obj
    if best is None:
        raise InfeasibleConstraintsError([rows[k] for k in eq_idx] or list(rows))
    result = ProjectionResult(best[0], best[1], n_tried, KktReport())
    result.residuals = kkt_residuals(result, v_star, masses, rows, h)
    return result


def evaluate_obstacle_constraint(state: ParticleState, i: int, unit,
                                 unit_index: int, t_next: float) -> ConstraintRow:
    """Constraint row between particle ``i`` and one obstacle unit.

    The offset is the surface gap at the obstacle pose at the end of the
    step; the single-entry gradient points along the outward normal.
    """
    gaps, normals, inside = unit.gaps(state.positions[i:i + 1],
                                      state.radii[i:i + 1], t_next)
    if inside[0]:
        raise ParticleInsideObstacle(
            f"particle {i} center is inside obstacle unit {unit_index}")
    row = SparseGradientRow(entries=[(i, normals[0].copy())],
                            offset=float(gaps[0]))
    return ConstraintRow(row=row, kind=RowKind.INEQUALITY,
                         pair_id=(i, state.count + unit_index))


def assemble_constraints(state: ParticleState, gammas: dict, neighbors: set,
                         obstacles: ObstacleSet | None, t_next: float,
                         d_neigh: float) -> list:
    """Build the constraint rows for one step.

    One row per neighbor pair, plus one row per particle/obstacle pair
    within ``d_neigh`` of an obstacle unit (pose taken at ``t_next``).
    A pair is an equality row iff its adhesion value is negative; a
    glued pair absent from the neighbor set raises
    :class:`GluedPairLost`.
    """
    n = state.count
    for pair, g in gammas.items():
        if g < 0 and pair[1] < n and pair not in neighbors:
            raise GluedPairLost(
                f"glued pair {pair} (gamma={g}) missing from neighbors")
    rows = []
    for i, j in sorted(neighbors):
        g = gammas.get((i, j), 0.0)
        kind = RowKind.EQUALITY if g < 0 else RowKind.INEQUALITY
        rows.append(ConstraintRow(distance_gradient(state, i, j), kind, (i, j)))
    if obstacles is None or not obstacles.units or n == 0:
        return rows
    for k, unit in enumerate(obstacles.units):
        gaps, normals, inside = unit.gaps(state.positions, state.radii, t_next)
        near = gaps <= d_neigh
        for i in range(n):
            g = gammas.get((i, n + k), 0.0)
            if g < 0 and not near[i]:
                raise GluedPairLost(
                    f"glued pair ({i}, obstacle {k}) has gap {gaps[i]} "
                    f"beyond d_neigh")
            if not near[i]:
                continue
            if inside[i]:
                raise ParticleInsideObstacle(
                    f"particle {i} center is inside obstacle unit {k}")
            kind = RowKind.EQUALITY if g < 0 else RowKind.INEQUALITY
            row = SparseGradientRow(entries=[(i, normals[i].copy())],
                                    offset=float(gaps[i]))
            rows.append(ConstraintRow(row=row, kind=kind, pair_id=(i, n + k)))
    return rows
