"""Neighbour search on a spatial hash and soft-disk excluded-volume forces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import SwarmParams, SwarmState, minimum_image, noise_block

DEFAULT_CONTACT_TOLERANCE = 0.05  # in units of the radius


def default_cell_size(params: SwarmParams) -> float:
    """Contact distance plus a generous bound on one step's displacement."""
    drift = params.speed * params.dt
    jitter = 5.0 * np.sqrt(2.0 * params.diff_trans * params.dt)
    return 2.0 * params.radius + drift + jitter


@dataclass(frozen=True, eq=False)
class SpatialHashGrid:
    cell_size: float
    shape: tuple          # cells along x, y
    cell_width: tuple     # actual cell extent, >= cell_size
    cell_index: np.ndarray  # (N, 2) integer cell coordinates
    order: np.ndarray     # robot indices sorted by flat cell id
    starts: np.ndarray    # offset into ``order`` for each flat cell
    counts: np.ndarray    # occupancy of each flat cell
    periodic: bool
    box: tuple

    @property
    def n(self) -> int:
        return len(self.order)

    @property
    def cells(self) -> dict:
        """Occupied cells as ``{(cx, cy): [robot indices]}``."""
        out = {}
        ny = self.shape[1]
        for flat in np.flatnonzero(self.counts):
            members = self.order[self.starts[flat]:self.starts[flat] + self.counts[flat]]
            out[(int(flat // ny), int(flat % ny))] = sorted(int(i) for i in members)
        return out

    def _offsets(self, axis: int):
        n = self.shape[axis]
        if self.periodic and n < 3:
            return sorted({o % n for o in (-1, 0, 1)})
        return [-1, 0, 1]

    def neighbourhood(self, cx: int, cy: int) -> list:
        """Robots in the 3x3 block of cells around ``(cx, cy)``."""
        nx, ny = self.shape
        found = []
        for ox in self._offsets(0):
            for oy in self._offsets(1):
                ax, ay = cx + ox, cy + oy
                if self.periodic:
                    ax, ay = ax % nx, ay % ny
                elif not (0 <= ax < nx and 0 <= ay < ny):
                    continue
                flat = ax * ny + ay
                found.extend(int(i) for i in self.order[self.starts[flat]:self.starts[flat] + self.counts[flat]])
        return sorted(found)

    def candidate_pairs(self):
        """All index pairs ``(i, j)``, ``i < j``, sharing a 3x3 neighbourhood."""
        nx, ny = self.shape
        ci = self.cell_index
        src, dst = [], []
        for ox in self._offsets(0):
            for oy in self._offsets(1):
                ax, ay = ci[:, 0] + ox, ci[:, 1] + oy
                if self.periodic:
                    ax, ay = ax % nx, ay % ny
                    valid = np.ones(len(ax), dtype=bool)
                else:
                    valid = (ax >= 0) & (ax < nx) & (ay >= 0) & (ay < ny)
                robots = np.flatnonzero(valid)
                flat = ax[valid] * ny + ay[valid]
                cnt = self.counts[flat]
                total = int(cnt.sum())
                if total == 0:
                    continue
                i = np.repeat(robots, cnt)
                first = np.repeat(self.starts[flat], cnt)
                within = np.arange(total) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                j = self.order[first + within]
                keep = i < j
                src.append(i[keep])
                dst.append(j[keep])
        if not src:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        return np.concatenate(src), np.concatenate(dst)


def build_grid(state: SwarmState, params: SwarmParams, cell_size: float | None = None) -> SpatialHashGrid:
    cs = default_cell_size(params) if cell_size is None else float(cell_size)
    w, h = params.domain_width, params.domain_height
    nx = max(1, int(w // cs))
    ny = max(1, int(h // cs))
    cw, ch = w / nx, h / ny
    pos = state.positions
    if params.periodic:
        pos = pos - np.array([w, h]) * np.floor(pos / np.array([w, h]))
    cx = np.clip(np.floor(pos[:, 0] / cw).astype(np.int64), 0, nx - 1)
    cy = np.clip(np.floor(pos[:, 1] / ch).astype(np.int64), 0, ny - 1)
    flat = cx * ny + cy
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=nx * ny)
    starts = np.cumsum(counts) - counts
    return SpatialHashGrid(
        cell_size=cs, shape=(nx, ny), cell_width=(cw, ch),
        cell_index=np.column_stack([cx, cy]), order=order, starts=starts, counts=counts,
        periodic=params.periodic, box=(w, h),
    )


@dataclass(frozen=True, eq=False)
class PairList:
    """Pairs within a cutoff, sorted by ``(i, j)``; ``delta`` points from i to j."""

    i: np.ndarray
    j: np.ndarray
    delta: np.ndarray
    dist: np.ndarray

    def __len__(self):
        return len(self.i)

    def within(self, cutoff: float) -> "PairList":
        keep = self.dist <= cutoff
        return PairList(self.i[keep], self.j[keep], self.delta[keep], self.dist[keep])

    def as_set(self) -> set:
        return set(zip(self.i.tolist(), self.j.tolist()))


def find_pairs(state: SwarmState, grid: SpatialHashGrid, params: SwarmParams, cutoff: float) -> PairList:
    """Pairs whose (minimum-image) centre distance is ``<= cutoff``."""
    if cutoff > min(grid.cell_width) + 1e-12:
        raise ValueError(f"cutoff {cutoff} exceeds grid cell width {min(grid.cell_width)}")
    i, j = grid.candidate_pairs()
    pos = state.positions
    delta = pos[j] - pos[i]
    if params.periodic:
        delta = minimum_image(delta, params.box)
    dist = np.hypot(delta[:, 0], delta[:, 1])
    keep = dist <= cutoff
    i, j, delta, dist = i[keep], j[keep], delta[keep], dist[keep]
    order = np.lexsort((j, i))
    return PairList(i[order], j[order], delta[order], dist[order])


def overlap_displacements(pairs: PairList, state: SwarmState, params: SwarmParams) -> np.ndarray:
    """Per-robot displacement from the linear spring law over the given pairs.

    Pairs that do not overlap contribute nothing.
    """
    n = state.n
    out = np.zeros((n, 2))
    sigma = 2.0 * params.radius
    ov = pairs.dist < sigma
    if not ov.any():
        return out
    i, j, delta, dist = pairs.i[ov], pairs.j[ov], pairs.delta[ov], pairs.dist[ov]
    unit = np.empty_like(delta)
    nz = dist > 0
    unit[nz] = delta[nz] / dist[nz, None]
    if not nz.all():
        # coincident centres: reproducible direction drawn from the robot's contact channel
        xi = noise_block(params.seed, state.step, n)[:, 3]
        phi = 2.0 * np.pi * ndtr(xi[i[~nz]])
        unit[~nz] = np.column_stack([np.cos(phi), np.sin(phi)])
    mag = 0.5 * params.force_stiffness * (sigma - dist) * params.dt
    push = mag[:, None] * unit
    # bincount sums in index order, so accumulation is deterministic
    for axis in (0, 1):
        out[:, axis] = np.bincount(j, weights=push[:, axis], minlength=n) - np.bincount(i, weights=push[:, axis], minlength=n)
    return out


def compute_overlap_forces(state: SwarmState, grid: SpatialHashGrid, params: SwarmParams) -> np.ndarray:
    """Collision displacement ``(N, 2)`` for the next integrator step."""
    pairs = find_pairs(state, grid, params, 2.0 * params.radius)
    return overlap_displacements(pairs, state, params)


@dataclass(frozen=True, eq=False)
class ContactGraph:
    n: int
    edges: np.ndarray  # (E, 2), rows (i, j) with i < j

    def __len__(self):
        return len(self.edges)

    def edge_set(self) -> set:
        return {(int(a), int(b)) for a, b in self.edges}


def contact_graph_from_pairs(pairs: PairList, n: int, params: SwarmParams, contact_tolerance: float) -> ContactGraph:
    near = pairs.within(2.0 * params.radius + contact_tolerance)
    return ContactGraph(n, np.column_stack([near.i, near.j]).astype(np.int64).reshape(-1, 2))


def build_contact_graph(state: SwarmState, params: SwarmParams, contact_tolerance: float | None = None) -> ContactGraph:
    if contact_tolerance is None:
        contact_tolerance = DEFAULT_CONTACT_TOLERANCE * params.radius
    if contact_tolerance < 0:
        raise ValueError("contact_tolerance must be >= 0")
    reach = 2.0 * params.radius + contact_tolerance
    grid = build_grid(state, params, cell_size=max(reach, default_cell_size(params)))
    pairs = find_pairs(state, grid, params, reach)
    return contact_graph_from_pairs(pairs, state.n, params, contact_tolerance)
