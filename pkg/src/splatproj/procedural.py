"""Procedural meshes and textures for tests, demos and benchmarks."""

from __future__ import annotations

import numpy as np

from .geometry import Mesh
from .texture import Texture


def uv_sphere(segments: int = 40, rings: int = 26, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Latitude/longitude sphere with an equirectangular UV layout.

    ``rings`` counts latitude bands; pole bands are triangle fans, the rest
    are split quads, giving ``2 * segments * (rings - 1)`` triangles.
    """
    if segments < 3 or rings < 2:
        raise ValueError("need segments >= 3 and rings >= 2")
    # grid of (rings + 1) x (segments + 1) vertices, seam column duplicated
    theta = np.linspace(0.0, np.pi, rings + 1)          # from +Z pole
    phi = np.linspace(0.0, 2.0 * np.pi, segments + 1)
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    normals = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], -1).reshape(-1, 3)
    normals[np.abs(normals) < 1e-15] = 0.0
    positions = normals * radius + np.asarray(center, dtype=np.float64)
    uu, vv = np.meshgrid(np.linspace(0.0, 1.0, segments + 1), 1.0 - theta / np.pi)
    uvs = np.stack([uu, vv], -1).reshape(-1, 2)

    # pole fans use dedicated pole vertices with u at the centre of each segment
    pole_uv = np.stack([(np.arange(segments) + 0.5) / segments, np.ones(segments)], -1)
    uvs = np.concatenate([uvs, pole_uv, pole_uv * [1.0, 0.0]])
    top_uv0 = (rings + 1) * (segments + 1)
    bot_uv0 = top_uv0 + segments

    def vid(i, j):
        return i * (segments + 1) + j

    tris = []
    for j in range(segments):
        a, b, c = vid(0, j), vid(1, j), vid(1, j + 1)
        tris.append([(a, top_uv0 + j, a), (b, b, b), (c, c, c)])
    for i in range(1, rings - 1):
        for j in range(segments):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            tris.append([(a, a, a), (b, b, b), (c, c, c)])
            tris.append([(a, a, a), (c, c, c), (d, d, d)])
    for j in range(segments):
        a, b, c = vid(rings - 1, j), vid(rings, j), vid(rings - 1, j + 1)
        tris.append([(a, a, a), (b, bot_uv0 + j, b), (c, c, c)])
    return Mesh(positions, uvs, normals, np.asarray(tris, dtype=np.int64))


def sphere_for_triangles(n_triangles: int, radius: float = 1.0) -> Mesh:
    """UV sphere with about ``n_triangles`` triangles and a 2:1 segment/ring ratio."""
    rings = max(2, int(round(np.sqrt(n_triangles / 4.0))) + 1)
    segments = max(3, int(round(n_triangles / (2.0 * (rings - 1)))))
    return uv_sphere(segments, rings, radius)


def deform(mesh: Mesh, scale=(1.0, 1.0, 1.0), bulge: float = 0.0) -> Mesh:
    """Differently shaped copy: anisotropic scaling plus a smooth radial bump
    ``r *= 1 + bulge * z``. Normals are recomputed from the new geometry."""
    from .geometry import area_weighted_normals

    p = np.array(mesh.positions)
    r = np.linalg.norm(p, axis=1, keepdims=True)
    z = np.where(r > 0, p[:, 2:3] / np.where(r > 0, r, 1.0), 0.0)
    p = p * (1.0 + bulge * z) * np.asarray(scale, dtype=np.float64)
    tris = np.array(mesh.triangles)
    normals = area_weighted_normals(p, tris[:, :, 0])
    tris[:, :, 2] = tris[:, :, 0]
    return Mesh(p, mesh.uvs, normals, tris)


def unit_quad(split: bool = True) -> Mesh:
    """Square [0,1]^2 in the z=0 plane, UV equal to XY, normal +Z."""
    pos = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=np.float64)
    uv = pos[:, :2].copy()
    n = np.array([[0.0, 0.0, 1.0]])
    quad = [(0, 0, 0), (1, 1, 0), (2, 2, 0), (3, 3, 0)]
    tris = [[quad[0], quad[1], quad[2]], [quad[0], quad[2], quad[3]]] if split else [[quad[0], quad[1], quad[2]]]
    return Mesh(pos, uv, n, np.asarray(tris, dtype=np.int64))


def checker_gradient(size: int = 256, squares: int = 8) -> Texture:
    """Checkerboard in blue over a red (u) / green (v) gradient."""
    x = np.arange(size)
    xx, yy = np.meshgrid(x, x)
    cell = max(size // squares, 1)
    checker = ((xx // cell + yy // cell) % 2).astype(np.float64)
    px = np.empty((size, size, 4), dtype=np.uint8)
    px[..., 0] = np.round(255.0 * xx / max(size - 1, 1))
    px[..., 1] = np.round(255.0 * yy / max(size - 1, 1))
    px[..., 2] = np.where(checker > 0, 230, 25)
    px[..., 3] = 255
    return Texture(px)


def random_texture(width: int, height: int, rng: np.random.Generator, opaque: bool = True) -> Texture:
    px = rng.integers(0, 256, size=(height, width, 4), dtype=np.uint8)
    if opaque:
        px[..., 3] = 255
    return Texture(px)
