"""Uniform spatial grid over a splat cloud.

Cells are cubes. The number of cells per axis is the ceiling of the cube root
of the target texel count, so there is roughly one target texel per cell.
Each splat is listed in every cell touched by the axis-aligned box around its
3-sigma ellipsoid. Cell lists are stored CSR style and sorted by splat id.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._parallel import bands, run_bands
from .errors import EmptyCloud
from .splat import SplatCloud

# keeps the far faces of the grid strictly outside the cloud bounds
_COVER_PAD = 1e-9


def cells_per_axis(target_pixel_count: int) -> int:
    """Exact integer ceil(cbrt(n))."""
    if target_pixel_count < 1:
        raise ValueError("target_pixel_count must be >= 1")
    n = max(1, int(round(target_pixel_count ** (1.0 / 3.0))))
    while n ** 3 < target_pixel_count:
        n += 1
    while n > 1 and (n - 1) ** 3 >= target_pixel_count:
        n -= 1
    return n


def grid_geometry(cloud: SplatCloud, target_pixel_count: int) -> tuple[np.ndarray, float, int]:
    """Origin, cell size and cells per axis for a cube padded around the cloud bounds."""
    if len(cloud) == 0:
        raise EmptyCloud("cannot build a grid over an empty cloud")
    n = cells_per_axis(target_pixel_count)
    lo, hi = cloud.bounds
    extent = float((hi - lo).max())
    if extent <= 0.0:
        extent = 1e-9
    cell = extent / n * (1.0 + _COVER_PAD)
    origin = 0.5 * (lo + hi) - 0.5 * cell * n
    return origin, cell, n


@dataclass(eq=False)
class SpatialGrid:
    origin: np.ndarray      # (3,)
    cell_size: float
    dims: tuple[int, int, int]
    cell_start: np.ndarray  # (nx*ny*nz + 1,) int64
    cell_ids: np.ndarray    # (M,) int32, ascending within a cell

    @property
    def n_cells(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def cell_diagonal(self) -> float:
        return float(np.sqrt(3.0) * self.cell_size)

    def linear_index(self, ix: int, iy: int, iz: int) -> int:
        nx, ny, _ = self.dims
        return ix + nx * (iy + ny * iz)

    def cell(self, ix: int, iy: int, iz: int) -> np.ndarray:
        k = self.linear_index(ix, iy, iz)
        return self.cell_ids[self.cell_start[k]:self.cell_start[k + 1]]

    def cell_of(self, position) -> tuple[int, int, int]:
        idx = np.floor((np.asarray(position, dtype=np.float64) - self.origin) / self.cell_size)
        idx = np.clip(np.nan_to_num(idx), 0, np.asarray(self.dims) - 1).astype(int)
        return int(idx[0]), int(idx[1]), int(idx[2])

    def occupancy(self) -> np.ndarray:
        return np.diff(self.cell_start)

    def dump(self) -> str:
        """Text listing of non-empty cells, ``cell ix iy iz: id,id,...``."""
        nx, ny, nz = self.dims
        counts = self.occupancy()
        lines = []
        for k in np.nonzero(counts)[0]:
            ix, rest = int(k % nx), int(k // nx)
            iy, iz = rest % ny, rest // ny
            ids = self.cell_ids[self.cell_start[k]:self.cell_start[k + 1]]
            lines.append(f"cell {ix} {iy} {iz}: " + ",".join(map(str, ids.tolist())))
        return "\n".join(lines) + ("\n" if lines else "")


@njit(cache=True, nogil=True)
def _splat_cell_ranges(pos, half, origin, cell, n, s0, s1, lo_out, hi_out):
    for i in range(s0, s1):
        for k in range(3):
            a = int(np.floor((pos[i, k] - half[i, k] - origin[k]) / cell))
            b = int(np.floor((pos[i, k] + half[i, k] - origin[k]) / cell))
            lo_out[i, k] = min(max(a, 0), n - 1)
            hi_out[i, k] = min(max(b, 0), n - 1)


@njit(cache=True, nogil=True)
def _count(lo, hi, n, s0, s1, counts):
    for i in range(s0, s1):
        for z in range(lo[i, 2], hi[i, 2] + 1):
            for y in range(lo[i, 1], hi[i, 1] + 1):
                base = n * (y + n * z)
                for x in range(lo[i, 0], hi[i, 0] + 1):
                    counts[base + x] += 1


@njit(cache=True, nogil=True)
def _fill(lo, hi, n, s0, s1, cursor, ids):
    for i in range(s0, s1):
        for z in range(lo[i, 2], hi[i, 2] + 1):
            for y in range(lo[i, 1], hi[i, 1] + 1):
                base = n * (y + n * z)
                for x in range(lo[i, 0], hi[i, 0] + 1):
                    c = base + x
                    ids[cursor[c]] = i
                    cursor[c] += 1


def insert_splats(cloud: SplatCloud, origin, cell_size: float, n: int, threads: int = 1) -> SpatialGrid:
    """Insert every splat into the n^3 grid at ``origin`` with cubic ``cell_size``.

    Splats are split into ``threads`` contiguous id ranges. Each range counts
    and fills its own slots, ranges are laid out in id order inside every
    cell, so the result is identical for any thread count.
    """
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    m = len(cloud)
    ncell = n * n * n
    lo = np.empty((m, 3), dtype=np.int64)
    hi = np.empty((m, 3), dtype=np.int64)
    parts = bands(m, threads)
    pos, half = cloud.positions, np.ascontiguousarray(cloud.aabb_half_extents)

    run_bands(lambda a, b: _splat_cell_ranges(pos, half, origin, float(cell_size), n, a, b, lo, hi), m, threads)

    def count(a, b):
        c = np.zeros(ncell, dtype=np.int64)
        _count(lo, hi, n, a, b, c)
        return c

    per_part = run_bands(count, m, threads)
    totals = per_part[0] if len(per_part) == 1 else np.sum(per_part, axis=0)
    start = np.zeros(ncell + 1, dtype=np.int64)
    np.cumsum(totals, out=start[1:])
    ids = np.empty(int(start[-1]), dtype=np.int32)
    # part k writes after parts 0..k-1 inside every cell
    cursors = []
    offset = start[:-1].copy()
    for c in per_part:
        cursors.append(offset.copy())
        offset += c
    del per_part, offset

    def fill(k, _):
        a, b = parts[k]
        _fill(lo, hi, n, a, b, cursors[k], ids)

    run_bands(fill, len(parts), len(parts))
    return SpatialGrid(origin, float(cell_size), (n, n, n), start, ids)


def build_grid(cloud: SplatCloud, target_pixel_count: int, threads: int = 1) -> SpatialGrid:
    """Spatial grid with ceil(cbrt(target_pixel_count)) cubic cells per axis
    spanning the cube-padded cloud bounds.

    Raises:
        EmptyCloud: the cloud has no splats.
    """
    origin, cell, n = grid_geometry(cloud, target_pixel_count)
    return insert_splats(cloud, origin, cell, n, threads)


def query_cell(grid: SpatialGrid, position) -> np.ndarray:
    """Ids (ascending) listed in the cell containing ``position``; positions
    outside the grid clamp to the nearest boundary cell."""
    return grid.cell(*grid.cell_of(position))


@njit(cache=True, nogil=True)
def segment_cells(origin, cell, n, ax, ay, az, bx, by, bz, out):
    """Write the linear indices of cells crossed by segment a->b (3D DDA) into
    ``out``; returns how many. Parts of the segment outside the grid are skipped."""
    a = np.array([ax, ay, az])
    d = np.array([bx - ax, by - ay, bz - az])
    size = cell * n
    s0, s1 = 0.0, 1.0
    for k in range(3):
        lo = origin[k]
        hi = origin[k] + size
        if d[k] == 0.0:
            if a[k] < lo or a[k] > hi:
                return 0
        else:
            t0 = (lo - a[k]) / d[k]
            t1 = (hi - a[k]) / d[k]
            if t0 > t1:
                t0, t1 = t1, t0
            s0 = max(s0, t0)
            s1 = min(s1, t1)
    if s0 > s1:
        return 0
    idx = np.empty(3, dtype=np.int64)
    step = np.empty(3, dtype=np.int64)
    t_next = np.empty(3)
    t_delta = np.empty(3)
    for k in range(3):
        p = a[k] + s0 * d[k]
        i = int(np.floor((p - origin[k]) / cell))
        idx[k] = min(max(i, 0), n - 1)
        if d[k] > 0.0:
            step[k] = 1
            t_next[k] = (origin[k] + (idx[k] + 1) * cell - a[k]) / d[k]
            t_delta[k] = cell / d[k]
        elif d[k] < 0.0:
            step[k] = -1
            t_next[k] = (origin[k] + idx[k] * cell - a[k]) / d[k]
            t_delta[k] = -cell / d[k]
        else:
            step[k] = 0
            t_next[k] = np.inf
            t_delta[k] = np.inf
    count = 0
    while True:
        if count < out.shape[0]:
            out[count] = idx[0] + n * (idx[1] + n * idx[2])
        count += 1
        k = 0
        if t_next[1] < t_next[k]:
            k = 1
        if t_next[2] < t_next[k]:
            k = 2
        if t_next[k] > s1:
            break
        idx[k] += step[k]
        if idx[k] < 0 or idx[k] >= n:
            break
        t_next[k] += t_delta[k]
    return count


def cells_along_ray(grid: SpatialGrid, origin, direction, t_min: float, t_max: float) -> list[tuple[int, int, int]]:
    """Cells crossed by ``origin + t * direction`` for t in [t_min, t_max]."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    a, b = o + t_min * d, o + t_max * d
    out = np.empty(4 * grid.dims[0] + 8, dtype=np.int64)
    k = segment_cells(grid.origin, grid.cell_size, grid.dims[0], *a, *b, out)
    nx, ny, _ = grid.dims
    return [(int(c % nx), int((c // nx) % ny), int(c // (nx * ny))) for c in out[:k]]
