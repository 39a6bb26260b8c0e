"""Comparison methods with the same inputs/outputs as ``project_texture``.

``project_global`` tests every splat for every texel and serves as the
correctness oracle for the grid path. ``project_per_face`` works on the
source mesh directly: each texel is projected onto the planes of all source
triangles facing the same way and takes the colour of the nearest hit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._parallel import run_bands
from .geometry import Mesh
from .project import MODE_GLOBAL, ProjectionParams, run_projection
from .raster import ProjectionMap
from .splat import SplatCloud
from .texture import Texture, sample_bilinear

DEFAULT_MAX_ANGLE_DEG = 60.0
DEFAULT_MAX_DIST_FRACTION = 0.05


def project_global(cloud: SplatCloud, pmap: ProjectionMap, params: ProjectionParams | None = None,
                   threads: int = 1, rows=None) -> tuple[Texture, float]:
    """Brute-force ray cast against the whole cloud.

    ``t_max="auto"`` resolves to the cell diagonal of the grid
    :func:`splatproj.grid.build_grid` would build for ``pmap``'s texel count,
    so results line up with :func:`splatproj.project.project_texture`.
    """
    return run_projection(MODE_GLOBAL, cloud, pmap, params or ProjectionParams(), threads=threads, rows=rows)


@njit(cache=True, nogil=True)
def _per_face_rows(rows, r0, r1, pm_valid, pm_pos, pm_nrm, a, e1, e2, fn, d00, d01, d11, inv_den, uv,
                   img, cos_min, max_dist, out, hit):
    width = pm_valid.shape[1]
    nface = a.shape[0]
    rgba = np.empty(img.shape[2])
    for ri in range(r0, r1):
        r = rows[ri]
        for x in range(width):
            if not pm_valid[r, x]:
                continue
            px = np.float64(pm_pos[r, x, 0])
            py = np.float64(pm_pos[r, x, 1])
            pz = np.float64(pm_pos[r, x, 2])
            nx = np.float64(pm_nrm[r, x, 0])
            ny = np.float64(pm_nrm[r, x, 1])
            nz = np.float64(pm_nrm[r, x, 2])
            best = -1
            best_dist = np.inf
            best_b1 = 0.0
            best_b2 = 0.0
            for f in range(nface):
                if fn[f, 0] * nx + fn[f, 1] * ny + fn[f, 2] * nz < cos_min:
                    continue
                wx = px - a[f, 0]
                wy = py - a[f, 1]
                wz = pz - a[f, 2]
                h = wx * fn[f, 0] + wy * fn[f, 1] + wz * fn[f, 2]
                dist = abs(h)
                if dist > max_dist or dist >= best_dist:
                    continue
                # foot of the perpendicular, relative to corner 0
                fx = wx - h * fn[f, 0]
                fy = wy - h * fn[f, 1]
                fz = wz - h * fn[f, 2]
                d20 = fx * e1[f, 0] + fy * e1[f, 1] + fz * e1[f, 2]
                d21 = fx * e2[f, 0] + fy * e2[f, 1] + fz * e2[f, 2]
                b1 = (d11[f] * d20 - d01[f] * d21) * inv_den[f]
                b2 = (d00[f] * d21 - d01[f] * d20) * inv_den[f]
                if b1 < -1e-9 or b2 < -1e-9 or b1 + b2 > 1.0 + 1e-9:
                    continue
                best = f
                best_dist = dist
                best_b1 = b1
                best_b2 = b2
            if best < 0:
                continue
            b0 = 1.0 - best_b1 - best_b2
            u = b0 * uv[best, 0, 0] + best_b1 * uv[best, 1, 0] + best_b2 * uv[best, 2, 0]
            v = b0 * uv[best, 0, 1] + best_b1 * uv[best, 1, 1] + best_b2 * uv[best, 2, 1]
            sample_bilinear(img, u, v, rgba)
            for k in range(3):
                out[r, x, k] = np.uint8(min(max(np.floor(rgba[k] + 0.5), 0.0), 255.0))
            out[r, x, 3] = 255
            hit[r, x] = True


def project_per_face(source_mesh: Mesh, source_texture: Texture, pmap: ProjectionMap,
                     max_angle_deg: float = DEFAULT_MAX_ANGLE_DEG, max_dist: float | None = None,
                     fallback_color=(0, 0, 0, 0), threads: int = 1, rows=None) -> tuple[Texture, float]:
    """Per Face Texture Projection.

    For every valid texel, scan all source triangles whose normal is within
    ``max_angle_deg`` of the texel normal, drop the texel position onto each
    triangle plane, and keep the nearest foot that lands inside its triangle
    and within ``max_dist`` (default 5% of the source bounding-box diagonal).
    The source texture is sampled bilinearly at that foot's UV.
    """
    if max_dist is None:
        max_dist = DEFAULT_MAX_DIST_FRACTION * source_mesh.bbox_diagonal()
    p = source_mesh.corner_positions()
    a = np.ascontiguousarray(p[:, 0])
    e1 = np.ascontiguousarray(p[:, 1] - p[:, 0])
    e2 = np.ascontiguousarray(p[:, 2] - p[:, 0])
    fn = np.cross(e1, e2)
    length = np.linalg.norm(fn, axis=1)
    d00 = np.einsum("ij,ij->i", e1, e1)
    d01 = np.einsum("ij,ij->i", e1, e2)
    d11 = np.einsum("ij,ij->i", e2, e2)
    den = d00 * d11 - d01 * d01
    keep = (length > 0) & (den > 0)
    fn = np.ascontiguousarray(fn[keep] / length[keep, None])
    uv = np.ascontiguousarray(source_mesh.corner_uvs()[keep])
    a, e1, e2 = a[keep], e1[keep], e2[keep]
    d00, d01, d11, inv_den = d00[keep], d01[keep], d11[keep], 1.0 / den[keep]

    out = np.empty((pmap.height, pmap.width, 4), dtype=np.uint8)
    out[:] = np.asarray(fallback_color, dtype=np.uint8)
    hit = np.zeros((pmap.height, pmap.width), dtype=np.bool_)
    rows = np.arange(pmap.height, dtype=np.int64) if rows is None else np.asarray(rows, dtype=np.int64)
    img = source_texture.pixels.astype(np.float64)
    cos_min = float(np.cos(np.radians(max_angle_deg)))

    def band(r0, r1):
        _per_face_rows(rows, r0, r1, pmap.valid, pmap.positions, pmap.normals, a, e1, e2, fn,
                       d00, d01, d11, inv_den, uv, img, cos_min, float(max_dist), out, hit)

    run_bands(band, len(rows), threads)
    valid = pmap.valid[rows]
    n_valid = int(np.count_nonzero(valid))
    coverage = float(np.count_nonzero(hit[rows] & valid)) / n_valid if n_valid else 0.0
    return Texture(out), coverage
