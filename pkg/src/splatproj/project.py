"""Texture projection: per-texel ray casts against splats gathered from the
spatial grid, composited front to back into an 8-bit texture."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from ._parallel import run_bands
from .errors import GridCloudMismatch
from .grid import SpatialGrid, grid_geometry, segment_cells
from .raster import ProjectionMap
from .splat import GaussianSplat, SplatCloud, quat_to_matrix
from .texture import Texture

COVERAGE_EPS = 1e-4

MODE_SINGLE_CELL = 0
MODE_DDA = 1
MODE_GLOBAL = 2


class Traversal(str, enum.Enum):
    SINGLE_CELL = "single_cell"
    DDA = "dda"


class Order(str, enum.Enum):
    """Compositing order. DISTANCE sorts by (|t|, t, id): the splats closest
    to the texel along the ray come first. RAY sorts by (t, id) from the
    back end of the ray forwards."""

    DISTANCE = "distance"
    RAY = "ray"


@dataclass(frozen=True)
class ProjectionParams:
    """Projection thresholds.

    ``t_max="auto"`` resolves to the grid cell diagonal. ``fallback_color`` is
    8-bit RGBA and is written to uncovered and invalid texels.
    """

    tau: float = 0.0
    t_max: float | str = "auto"
    sigma_cut: float = 3.0
    stop_transmittance: float = 1e-3
    fallback_color: tuple[int, int, int, int] = (0, 0, 0, 0)
    traversal: Traversal = Traversal.SINGLE_CELL
    order: Order = Order.DISTANCE

    def __post_init__(self):
        if not -1.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [-1, 1], got {self.tau}")
        if not self.sigma_cut > 0:
            raise ValueError("sigma_cut must be positive")
        if isinstance(self.t_max, str):
            if self.t_max != "auto":
                raise ValueError(f"t_max must be a number or 'auto', got {self.t_max!r}")
        elif not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if len(self.fallback_color) != 4 or not all(0 <= c <= 255 for c in self.fallback_color):
            raise ValueError("fallback_color must be four values in 0..255")
        object.__setattr__(self, "traversal", Traversal(self.traversal))
        object.__setattr__(self, "order", Order(self.order))

    @property
    def is_auto(self) -> bool:
        return isinstance(self.t_max, str)

    def resolved(self, cell_size: float) -> "ProjectionParams":
        """Copy with ``t_max`` fixed to the diagonal of a cell of ``cell_size``."""
        if not self.is_auto:
            return self
        return replace(self, t_max=float(np.sqrt(3.0) * cell_size))


@dataclass(frozen=True)
class Contribution:
    splat_id: int
    t: float
    alpha_eff: float
    color: tuple[float, float, float]


@njit(cache=True, nogil=True, inline="always")
def _ray_weight(ox, oy, oz, dx, dy, dz, j, sp_pos, sp_nrm, sp_m, sp_tpad, sp_op, tau, tmax, cut2):
    cos = sp_nrm[j, 0] * dx + sp_nrm[j, 1] * dy + sp_nrm[j, 2] * dz
    if cos <= tau:
        return False, 0.0, 0.0
    px = ox - sp_pos[j, 0]
    py = oy - sp_pos[j, 1]
    pz = oz - sp_pos[j, 2]
    # ray in unit-Gaussian coordinates
    l0 = sp_m[j, 0, 0] * px + sp_m[j, 0, 1] * py + sp_m[j, 0, 2] * pz
    l1 = sp_m[j, 1, 0] * px + sp_m[j, 1, 1] * py + sp_m[j, 1, 2] * pz
    l2 = sp_m[j, 2, 0] * px + sp_m[j, 2, 1] * py + sp_m[j, 2, 2] * pz
    e0 = sp_m[j, 0, 0] * dx + sp_m[j, 0, 1] * dy + sp_m[j, 0, 2] * dz
    e1 = sp_m[j, 1, 0] * dx + sp_m[j, 1, 1] * dy + sp_m[j, 1, 2] * dz
    e2 = sp_m[j, 2, 0] * dx + sp_m[j, 2, 1] * dy + sp_m[j, 2, 2] * dz
    ee = e0 * e0 + e1 * e1 + e2 * e2
    t = -(l0 * e0 + l1 * e1 + l2 * e2) / ee
    r0 = l0 + t * e0
    r1 = l1 + t * e1
    r2 = l2 + t * e2
    d2 = r0 * r0 + r1 * r1 + r2 * r2
    if d2 > cut2:
        return False, 0.0, 0.0
    if t < -sp_tpad[j] or t > tmax:
        return False, 0.0, 0.0
    alpha = sp_op[j] * np.exp(-0.5 * d2) * cos
    if alpha > 1.0:
        alpha = 1.0
    return True, t, alpha


@njit(cache=True, nogil=True, inline="always")
def _after(t1, j1, t2, j2, by_distance):
    if by_distance:
        a1 = abs(t1)
        a2 = abs(t2)
        if a1 != a2:
            return a1 > a2
    if t1 != t2:
        return t1 > t2
    return j1 > j2


@njit(cache=True, nogil=True)
def _sort_contributions(n, ts, ids, als, by_distance):
    # insertion sort; lists are short
    for i in range(1, n):
        t, j, a = ts[i], ids[i], als[i]
        k = i - 1
        while k >= 0 and _after(ts[k], ids[k], t, j, by_distance):
            ts[k + 1] = ts[k]
            ids[k + 1] = ids[k]
            als[k + 1] = als[k]
            k -= 1
        ts[k + 1] = t
        ids[k + 1] = j
        als[k + 1] = a


@njit(cache=True, nogil=True)
def _project_rows(rows, r0, r1, mode, pm_valid, pm_pos, pm_nrm,
                  sp_pos, sp_nrm, sp_m, sp_tpad, sp_col, sp_op,
                  g_origin, g_cell, g_n, g_start, g_ids, g_max_occ,
                  tau, tmax, cut2, stop_t, tpad_max, by_distance, out, hit):
    width = pm_valid.shape[1]
    nsplat = sp_pos.shape[0]
    cells = np.empty(3 * g_n + 8, dtype=np.int64)
    max_cells = 1 if mode == MODE_SINGLE_CELL else cells.shape[0]
    # upper bound on candidates per texel, so nothing is reallocated per texel
    cap = nsplat if mode == MODE_GLOBAL else max(int(g_max_occ) * max_cells, 1)
    ts = np.empty(cap)
    ids = np.empty(cap, dtype=np.int64)
    als = np.empty(cap)
    cand = np.empty(cap, dtype=np.int64)
    for ri in range(r0, r1):
        r = rows[ri]
        for x in range(width):
            if not pm_valid[r, x]:
                continue
            ox = np.float64(pm_pos[r, x, 0])
            oy = np.float64(pm_pos[r, x, 1])
            oz = np.float64(pm_pos[r, x, 2])
            dx = np.float64(pm_nrm[r, x, 0])
            dy = np.float64(pm_nrm[r, x, 1])
            dz = np.float64(pm_nrm[r, x, 2])
            ln = np.sqrt(dx * dx + dy * dy + dz * dz)
            dx /= ln
            dy /= ln
            dz /= ln
            n = 0
            if mode == MODE_GLOBAL:
                for j in range(nsplat):
                    ok, t, a = _ray_weight(ox, oy, oz, dx, dy, dz, j, sp_pos, sp_nrm, sp_m, sp_tpad, sp_op,
                                           tau, tmax, cut2)
                    if ok:
                        ts[n] = t
                        ids[n] = j
                        als[n] = a
                        n += 1
            else:
                ix = min(max(int(np.floor((ox - g_origin[0]) / g_cell)), 0), g_n - 1)
                iy = min(max(int(np.floor((oy - g_origin[1]) / g_cell)), 0), g_n - 1)
                iz = min(max(int(np.floor((oz - g_origin[2]) / g_cell)), 0), g_n - 1)
                cells[0] = ix + g_n * (iy + g_n * iz)
                ncell = 1
                if mode == MODE_DDA:
                    ncell += segment_cells(g_origin, g_cell, g_n,
                                           ox - tpad_max * dx, oy - tpad_max * dy, oz - tpad_max * dz,
                                           ox + tmax * dx, oy + tmax * dy, oz + tmax * dz, cells[1:])
                    ncell = min(ncell, cells.shape[0])
                m = 0
                for c in range(ncell):
                    for k in range(g_start[cells[c]], g_start[cells[c] + 1]):
                        cand[m] = g_ids[k]
                        m += 1
                if ncell > 1:
                    cand[:m].sort()
                prev = -1
                for k in range(m):
                    j = cand[k]
                    if j == prev:
                        continue
                    prev = j
                    ok, t, a = _ray_weight(ox, oy, oz, dx, dy, dz, j, sp_pos, sp_nrm, sp_m, sp_tpad, sp_op,
                                           tau, tmax, cut2)
                    if ok:
                        ts[n] = t
                        ids[n] = j
                        als[n] = a
                        n += 1
            if n == 0:
                continue
            _sort_contributions(n, ts, ids, als, by_distance)
            trans = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            acc = 0.0
            for k in range(n):
                a = als[k]
                j = ids[k]
                w = trans * a
                c0 += w * sp_col[j, 0]
                c1 += w * sp_col[j, 1]
                c2 += w * sp_col[j, 2]
                acc += w
                trans *= 1.0 - a
                if trans < stop_t:
                    break
            if acc > COVERAGE_EPS:
                out[r, x, 0] = np.uint8(min(max(np.floor(c0 / acc * 255.0 + 0.5), 0.0), 255.0))
                out[r, x, 1] = np.uint8(min(max(np.floor(c1 / acc * 255.0 + 0.5), 0.0), 255.0))
                out[r, x, 2] = np.uint8(min(max(np.floor(c2 / acc * 255.0 + 0.5), 0.0), 255.0))
                out[r, x, 3] = 255
                hit[r, x] = True


def _empty_grid_arrays():
    return np.zeros(3), 1.0, 1, np.zeros(2, dtype=np.int64), np.zeros(0, dtype=np.int32), 0


def run_projection(mode: int, cloud: SplatCloud, pmap: ProjectionMap, params: ProjectionParams,
                   grid: SpatialGrid | None = None, threads: int = 1, rows=None) -> tuple[Texture, float]:
    """Shared driver for the grid and global paths.

    ``rows`` restricts work to a subset of image rows (others keep the
    fallback colour); coverage is then measured over those rows only.
    """
    if params.is_auto:
        cell = grid.cell_size if grid is not None else grid_geometry(cloud, pmap.width * pmap.height)[1]
        params = params.resolved(cell)
    out = np.empty((pmap.height, pmap.width, 4), dtype=np.uint8)
    out[:] = np.asarray(params.fallback_color, dtype=np.uint8)
    hit = np.zeros((pmap.height, pmap.width), dtype=np.bool_)
    rows = np.arange(pmap.height, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    if len(cloud) == 0 or len(rows) == 0:
        return Texture(out), 0.0

    g = _empty_grid_arrays() if grid is None else (
        grid.origin, float(grid.cell_size), int(grid.dims[0]), grid.cell_start, grid.cell_ids,
        int(grid.occupancy().max()))
    sp_m = cloud.ray_transform
    sp_tpad = cloud.radii
    tpad_max = float(sp_tpad.max())

    def band(a, b):
        _project_rows(rows, a, b, mode, pmap.valid, pmap.positions, pmap.normals,
                      cloud.positions, cloud.normals, sp_m, sp_tpad, cloud.colors, cloud.opacities,
                      *g, float(params.tau), float(params.t_max), float(params.sigma_cut) ** 2,
                      float(params.stop_transmittance), tpad_max, params.order == Order.DISTANCE, out, hit)

    run_bands(band, len(rows), threads)
    valid = pmap.valid[rows]
    n_valid = int(np.count_nonzero(valid))
    coverage = float(np.count_nonzero(hit[rows] & valid)) / n_valid if n_valid else 0.0
    return Texture(out), coverage


def project_texture(grid: SpatialGrid, cloud: SplatCloud, pmap: ProjectionMap,
                    params: ProjectionParams | None = None, threads: int = 1, rows=None) -> tuple[Texture, float]:
    """Bake ``cloud`` into a texture laid out like ``pmap`` using ``grid`` for lookups.

    For each valid texel a ray leaves the texel position along its normal;
    candidate splats come from the texel's grid cell (or, with DDA traversal,
    every cell the ray segment crosses). Contributions are ordered per
    ``params.order`` (ties broken by splat id) and composited front to back,
    then normalized by the accumulated alpha. Output is identical for any ``threads``.

    Returns:
        (texture, coverage) where coverage is the fraction of valid texels
        that received colour.

    Raises:
        GridCloudMismatch: the grid lists ids the cloud does not have.
    """
    params = params or ProjectionParams()
    if len(grid.cell_ids) and int(grid.cell_ids.max()) >= len(cloud):
        raise GridCloudMismatch(f"grid references splat {int(grid.cell_ids.max())}, cloud has {len(cloud)}")
    mode = MODE_DDA if params.traversal == Traversal.DDA else MODE_SINGLE_CELL
    return run_projection(mode, cloud, pmap, params, grid=grid, threads=threads, rows=rows)


def ray_gaussian_weight(origin, direction, splat: GaussianSplat,
                        params: ProjectionParams | None = None) -> Contribution | None:
    """Contribution of one splat to a ray, or None if it is filtered out.

    Splats facing away (normal . direction <= tau), farther than ``sigma_cut``
    in Mahalanobis distance, or whose closest approach lies outside
    [-3 max(scale), t_max] along the ray contribute nothing. An unresolved
    ``t_max="auto"`` places no forward limit.
    """
    params = params or ProjectionParams()
    tmax = np.inf if params.is_auto else float(params.t_max)
    d = np.asarray(direction, dtype=np.float64)
    o = np.asarray(origin, dtype=np.float64)
    scale = np.asarray(splat.scale, dtype=np.float64)
    q = np.asarray(splat.orientation, dtype=np.float64)
    rot = quat_to_matrix((q / np.linalg.norm(q))[None])
    sp_m = np.ascontiguousarray(np.swapaxes(rot, 1, 2) / scale[None, :, None])
    ok, t, a = _ray_weight(o[0], o[1], o[2], d[0], d[1], d[2], 0,
                           np.asarray([splat.position], dtype=np.float64),
                           np.asarray([splat.normal], dtype=np.float64),
                           sp_m, np.array([3.0 * scale.max()]), np.array([float(splat.opacity)]),
                           float(params.tau), tmax, float(params.sigma_cut) ** 2)
    if not ok:
        return None
    return Contribution(splat.id, float(t), float(a), tuple(splat.color))
