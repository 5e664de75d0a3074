"""Cell-grid neighbor detection and adhesion carry-over.

Particles are bucketed into cubic cells; pair gaps are evaluated only
between particles in nearby cells.  The stencil reach accounts for the
particle radii, so the produced pair set is exactly the set of pairs
with gap <= d_neigh for any cell size.  No fixed bounding box is
assumed: cells are keyed by their integer coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ParticleState

__all__ = [
    "GluedPairLost",
    "GridParams",
    "NeighborSet",
    "brute_force_neighbors",
    "carry_gammas",
    "find_neighbors",
]


class GluedPairLost(RuntimeError):
    """A pair with negative adhesion left the neighbor set.

    Glued pairs have zero gap, so this indicates d_neigh chosen too
    small for the step displacements, or a solver fault.
    """


@dataclass(frozen=True)
class GridParams:
    """Cell size and neighbor cutoff; the cell size must exceed the cutoff."""

    cell_size: float
    d_neigh: float

    def __post_init__(self):
        if self.d_neigh <= 0:
            raise ValueError("d_neigh must be positive")
        if self.cell_size <= self.d_neigh:
            raise ValueError("cell_size must exceed d_neigh")


@dataclass
class NeighborSet:
    """Pairs (i, j) with i < j within the cutoff, and their adhesion values."""

    pairs: set = field(default_factory=set)
    gammas: dict = field(default_factory=dict)
    built_at_step: int = 0
    n_distance_checks: int = 0


def _cross_join(starts_a, counts_a, starts_b, counts_b, order):
    """All index pairs (x, y), x in group a_g and y in group b_g, per g."""
    nn = counts_a * counts_b
    total = int(nn.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    gid = np.repeat(np.arange(len(nn)), nn)
    base = np.concatenate(([0], np.cumsum(nn)[:-1]))
    local = np.arange(total) - np.repeat(base, nn)
    cb = counts_b[gid]
    a_loc = local // cb
    b_loc = local - a_loc * cb
    return order[starts_a[gid] + a_loc], order[starts_b[gid] + b_loc]


def find_neighbors(state: ParticleState, params: GridParams,
                   built_at_step: int = 0) -> NeighborSet:
    """Exactly the pairs with gap <= d_neigh, found via the cell grid.

    Fresh adhesion values are all zero; use :func:`carry_gammas` to
    transfer them from the previous step.
    """
    n = state.count
    if n < 2:
        return NeighborSet(built_at_step=built_at_step)
    pos = state.positions
    radii = state.radii
    nu = params.cell_size
    # stencil reach: centers of interacting pairs can be up to
    # d_neigh + 2 r_max apart
    reach = max(1, math.ceil((params.d_neigh + 2.0 * radii.max()) / nu))
    cells = np.floor(pos / nu).astype(np.int64)
    cells -= cells.min(axis=0)
    base = int(cells.max()) + 2 * reach + 2
    if base ** 3 > 2 ** 62:
        # degenerate spread; the quadratic scan is still exact
        pairs = brute_force_neighbors(state, params.d_neigh)
        return NeighborSet(pairs=pairs, gammas={}, built_at_step=built_at_step,
                           n_distance_checks=n * (n - 1) // 2)

    def pack(cx, cy, cz):
        return (cx * base + cy) * base + cz

    keys = pack(cells[:, 0], cells[:, 1], cells[:, 2])
    order = np.argsort(keys, kind="stable")
    uniq, starts = np.unique(keys[order], return_index=True)
    counts = np.diff(np.append(starts, n))

    cand_i, cand_j = [], []
    # pairs within one cell
    ia, ib = _cross_join(starts, counts, starts, counts, order)
    keep = ia < ib
    cand_i.append(ia[keep])
    cand_j.append(ib[keep])
    # pairs across distinct cells: visit each unordered cell pair once via
    # the lexicographically positive half of the stencil
    rng = range(-reach, reach + 1)
    offsets = [(dx, dy, dz) for dx in rng for dy in rng for dz in rng
               if (dx, dy, dz) > (0, 0, 0)]
    for off in offsets:
        target = uniq + pack(*off)
        pos_b = np.searchsorted(uniq, target)
        pos_b[pos_b >= len(uniq)] = 0
        matched = uniq[pos_b] == target
        if not matched.any():
            continue
        ga = np.flatnonzero(matched)
        gb = pos_b[ga]
        ia, ib = _cross_join(starts[ga], counts[ga], starts[gb], counts[gb],
                             order)
        cand_i.append(ia)
        cand_j.append(ib)

    ii = np.concatenate(cand_i)
    jj = np.concatenate(cand_j)
    n_checks = len(ii)
    if n_checks:
        gap = (np.linalg.norm(pos[jj] - pos[ii], axis=1)
               - radii[ii] - radii[jj])
        keep = gap <= params.d_neigh
        ii, jj = ii[keep], jj[keep]
    lo = np.minimum(ii, jj)
    hi = np.maximum(ii, jj)
    pairs = set(zip(lo.tolist(), hi.tolist()))
    return NeighborSet(pairs=pairs, gammas={},
                       built_at_step=built_at_step,
                       n_distance_checks=n_checks)


def brute_force_neighbors(state: ParticleState, d_neigh: float) -> set:
    """Quadratic all-pairs scan; reference oracle for the grid."""
    n = state.count
    if n < 2:
        return set()
    pos = state.positions
    diff = pos[None, :, :] - pos[:, None, :]
    dist = np.linalg.norm(diff, axis=2)
    gap = dist - state.radii[None, :] - state.radii[:, None]
    ii, jj = np.triu_indices(n, k=1)
    keep = gap[ii, jj] <= d_neigh
    return set(zip(ii[keep].tolist(), jj[keep].tolist()))


def carry_gammas(old: NeighborSet, fresh: NeighborSet) -> NeighborSet:
    """Transfer adhesion values onto a freshly built neighbor set.

    Pairs present in both keep their value, new pairs start at zero, and
    pairs leaving the set are dropped -- unless they were glued, which
    raises :class:`GluedPairLost`.
    """
    for pair, g in old.gammas.items():
        if g < 0 and pair not in fresh.pairs:
            raise GluedPairLost(
                f"glued pair {pair} (gamma={g}) left the neighbor set")
    gammas = {pair: old.gammas.get(pair, 0.0) for pair in fresh.pairs}
    return NeighborSet(pairs=set(fresh.pairs), gammas=gammas,
                       built_at_step=fresh.built_at_step,
                       n_distance_checks=fresh.n_distance_checks)
