"""Rasterize a mesh into UV space as per-texel position/normal maps."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from ._parallel import run_bands
from .errors import NoCoverage
from .geometry import Mesh

_INSIDE_EPS = 1e-12
_PMAP_MAGIC = b"PMAP"


@dataclass(eq=False)
class ProjectionMap:
    """Cached projection map, one entry per output texel.

    Arrays are indexed ``[row, x]`` with row 0 at the top of the image (see
    :mod:`splatproj.texture` for the UV convention). Invalid entries are zero.
    """

    valid: np.ndarray      # (H, W) bool
    positions: np.ndarray  # (H, W, 3) float32
    normals: np.ndarray    # (H, W, 3) float32
    triangle: np.ndarray   # (H, W) int32, -1 where invalid

    @property
    def width(self) -> int:
        return self.valid.shape[1]

    @property
    def height(self) -> int:
        return self.valid.shape[0]

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    @classmethod
    def empty(cls, width: int, height: int) -> "ProjectionMap":
        return cls(
            np.zeros((height, width), dtype=np.bool_),
            np.zeros((height, width, 3), dtype=np.float32),
            np.zeros((height, width, 3), dtype=np.float32),
            np.full((height, width), -1, dtype=np.int32),
        )

    def to_bytes(self) -> bytes:
        """Debug dump: ``PMAP``, u32 width, u32 height, then per texel
        u8 valid, 3 x f32 position, 3 x f32 normal (little-endian, row-major)."""
        rec = np.zeros(self.width * self.height, dtype=[("valid", "u1"), ("pos", "<f4", 3), ("nrm", "<f4", 3)])
        rec["valid"] = self.valid.ravel()
        rec["pos"] = self.positions.reshape(-1, 3)
        rec["nrm"] = self.normals.reshape(-1, 3)
        return _PMAP_MAGIC + struct.pack("<II", self.width, self.height) + rec.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ProjectionMap":
        if data[:4] != _PMAP_MAGIC:
            raise ValueError("not a PMAP dump")
        width, height = struct.unpack_from("<II", data, 4)
        rec = np.frombuffer(data, dtype=[("valid", "u1"), ("pos", "<f4", 3), ("nrm", "<f4", 3)],
                            count=width * height, offset=12)
        pm = cls.empty(width, height)
        pm.valid[:] = rec["valid"].reshape(height, width).astype(bool)
        pm.positions[:] = rec["pos"].reshape(height, width, 3)
        pm.normals[:] = rec["nrm"].reshape(height, width, 3)
        return pm

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())


@njit(cache=True, nogil=True)
def _raster_band(tri_uv, tri_pos, tri_nrm, width, height, r0, r1, valid, pos, nrm, tri_idx):
    for f in range(tri_uv.shape[0]):
        ax, ay = tri_uv[f, 0, 0], tri_uv[f, 0, 1]
        bx, by = tri_uv[f, 1, 0], tri_uv[f, 1, 1]
        cx, cy = tri_uv[f, 2, 0], tri_uv[f, 2, 1]
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if area == 0.0:
            continue
        umin = min(ax, bx, cx)
        umax = max(ax, bx, cx)
        vmin = min(ay, by, cy)
        vmax = max(ay, by, cy)
        # widened by one texel; the inside test decides
        x0 = max(int(np.floor(umin * width - 0.5)), 0)
        x1 = min(int(np.ceil(umax * width - 0.5)), width - 1)
        y0 = max(int(np.floor(vmin * height - 0.5)), 0)
        y1 = min(int(np.ceil(vmax * height - 0.5)), height - 1)
        # image rows run opposite to v
        ra = max(height - 1 - y1, r0)
        rb = min(height - 1 - y0, r1 - 1)
        if ra > rb or x0 > x1:
            continue
        for r in range(ra, rb + 1):
            v = (height - r - 0.5) / height
            for x in range(x0, x1 + 1):
                if tri_idx[r, x] >= 0:
                    continue
                u = (x + 0.5) / width
                w0 = ((bx - u) * (cy - v) - (by - v) * (cx - u)) / area
                w1 = ((cx - u) * (ay - v) - (cy - v) * (ax - u)) / area
                w2 = ((ax - u) * (by - v) - (ay - v) * (bx - u)) / area
                if w0 < -_INSIDE_EPS or w1 < -_INSIDE_EPS or w2 < -_INSIDE_EPS:
                    continue
                s = w0 + w1 + w2
                w0 /= s
                w1 /= s
                w2 /= s
                nx = w0 * tri_nrm[f, 0, 0] + w1 * tri_nrm[f, 1, 0] + w2 * tri_nrm[f, 2, 0]
                ny = w0 * tri_nrm[f, 0, 1] + w1 * tri_nrm[f, 1, 1] + w2 * tri_nrm[f, 2, 1]
                nz = w0 * tri_nrm[f, 0, 2] + w1 * tri_nrm[f, 1, 2] + w2 * tri_nrm[f, 2, 2]
                ln = np.sqrt(nx * nx + ny * ny + nz * nz)
                if ln < 1e-8:
                    # opposing corner normals: fall back to the geometric normal
                    e1x = tri_pos[f, 1, 0] - tri_pos[f, 0, 0]
                    e1y = tri_pos[f, 1, 1] - tri_pos[f, 0, 1]
                    e1z = tri_pos[f, 1, 2] - tri_pos[f, 0, 2]
                    e2x = tri_pos[f, 2, 0] - tri_pos[f, 0, 0]
                    e2y = tri_pos[f, 2, 1] - tri_pos[f, 0, 1]
                    e2z = tri_pos[f, 2, 2] - tri_pos[f, 0, 2]
                    nx = e1y * e2z - e1z * e2y
                    ny = e1z * e2x - e1x * e2z
                    nz = e1x * e2y - e1y * e2x
                    ln = np.sqrt(nx * nx + ny * ny + nz * nz)
                    if ln < 1e-300:
                        nx, ny, nz, ln = 0.0, 0.0, 1.0, 1.0
                for k in range(3):
                    pos[r, x, k] = w0 * tri_pos[f, 0, k] + w1 * tri_pos[f, 1, k] + w2 * tri_pos[f, 2, k]
                nrm[r, x, 0] = nx / ln
                nrm[r, x, 1] = ny / ln
                nrm[r, x, 2] = nz / ln
                valid[r, x] = True
                tri_idx[r, x] = f


def rasterize(mesh: Mesh, width: int, height: int, threads: int = 1) -> ProjectionMap:
    """Rasterize without the coverage check (may return an all-invalid map)."""
    if width < 1 or height < 1:
        raise ValueError("projection map dimensions must be positive")
    pm = ProjectionMap.empty(width, height)
    tri_uv = np.ascontiguousarray(mesh.corner_uvs())
    tri_pos = np.ascontiguousarray(mesh.corner_positions())
    tri_nrm = np.ascontiguousarray(mesh.corner_normals())

    def band(r0, r1):
        _raster_band(tri_uv, tri_pos, tri_nrm, width, height, r0, r1,
                     pm.valid, pm.positions, pm.normals, pm.triangle)

    run_bands(band, height, threads)
    return pm


def rasterize_projection_map(mesh: Mesh, width: int, height: int, threads: int = 1) -> ProjectionMap:
    """Build the cached projection map of ``mesh`` at ``width`` x ``height``.

    Each texel centre inside a UV triangle receives the interpolated surface
    position and normal. Overlapping UV triangles keep the lowest triangle
    index; zero-area UV triangles are skipped. Rows are split into ``threads``
    bands; the output does not depend on the band count.

    Raises:
        NoCoverage: no texel centre fell inside any triangle.
    """
    pm = rasterize(mesh, width, height, threads)
    if pm.valid_count == 0:
        raise NoCoverage(f"no texel of the {width}x{height} map is covered by the mesh UVs")
    return pm
