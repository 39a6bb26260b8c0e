"""Indexed triangle meshes, a Wavefront OBJ subset reader/writer and
barycentric interpolation."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DegenerateNormal, EmptyMesh, MalformedRecord, MissingNormal, MissingUV

# records that carry no information for texture transfer
_IGNORED = {"o", "g", "s", "mtllib", "usemtl", "l", "p", "vp", "cstype", "deg", "curv", "surf"}
_UV_EPS = 1e-9


class Barycentric(NamedTuple):
    b0: float
    b1: float
    b2: float

    def inside(self) -> bool:
        return self.b0 >= 0.0 and self.b1 >= 0.0 and self.b2 >= 0.0


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with separately indexed positions, UVs and normals.

    ``triangles`` has shape (F, 3, 3): for triangle f and corner k,
    ``triangles[f, k]`` is ``(position_index, uv_index, normal_index)``.
    """

    positions: np.ndarray
    uvs: np.ndarray
    normals: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        for name, dtype in (("positions", np.float64), ("uvs", np.float64),
                            ("normals", np.float64), ("triangles", np.int64)):
            arr = np.array(getattr(self, name), dtype=dtype)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.triangles.ndim != 3 or self.triangles.shape[1:] != (3, 3):
            raise ValueError(f"triangles must have shape (F, 3, 3), got {self.triangles.shape}")
        if len(self.triangles) == 0:
            raise EmptyMesh("mesh has no triangles")
        for col, arr, name in ((0, self.positions, "position"), (1, self.uvs, "uv"),
                               (2, self.normals, "normal")):
            idx = self.triangles[:, :, col]
            if idx.min() < 0 or idx.max() >= len(arr):
                raise MalformedRecord(f"triangle {name} index out of range")

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corner_positions(self) -> np.ndarray:
        """(F, 3, 3) corner positions."""
        return self.positions[self.triangles[:, :, 0]]

    def corner_uvs(self) -> np.ndarray:
        """(F, 3, 2) corner UVs."""
        return self.uvs[self.triangles[:, :, 1]]

    def corner_normals(self) -> np.ndarray:
        """(F, 3, 3) corner normals."""
        return self.normals[self.triangles[:, :, 2]]

    def face_normals(self) -> np.ndarray:
        """Unnormalized geometric face normals (length = 2 * area)."""
        p = self.corner_positions()
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def bbox_diagonal(self) -> float:
        used = self.positions[np.unique(self.triangles[:, :, 0])]
        return float(np.linalg.norm(used.max(axis=0) - used.min(axis=0)))


def area_weighted_normals(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Per-position normals as the sum of incident face cross products.

    ``faces`` holds position indices, shape (F, 3). Positions not touched by a
    non-degenerate face get +Z.
    """
    p = positions[faces]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    acc = np.zeros_like(positions, dtype=np.float64)
    for k in range(3):
        np.add.at(acc, faces[:, k], fn)
    length = np.linalg.norm(acc, axis=1)
    out = np.zeros_like(acc)
    out[:, 2] = 1.0
    ok = length > 1e-300
    out[ok] = acc[ok] / length[ok, None]
    return out


def _resolve(index: int, count: int, lineno: int, kind: str) -> int:
    if index > 0:
        resolved = index - 1
    elif index < 0:
        resolved = count + index
    else:
        raise MalformedRecord(f"{kind} index 0 is not valid", lineno)
    if not 0 <= resolved < count:
        raise MalformedRecord(f"{kind} index {index} out of range", lineno)
    return resolved


def parse_obj(data: bytes | str) -> Mesh:
    """Parse the v/vt/vn/f subset of Wavefront OBJ into a :class:`Mesh`.

    Polygons are fan-triangulated from their first corner. Every corner must
    reference a texture coordinate. If no corner references a normal, smooth
    area-weighted normals are computed from the geometry.
    """
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    positions: list[tuple[float, float, float]] = []
    uvs: list[tuple[float, float]] = []
    normals: list[tuple[float, float, float]] = []
    corners: list[tuple[int, int, int]] = []
    have_normal: set[bool] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key, args = parts[0], parts[1:]
        try:
            if key == "v":
                if len(args) < 3:
                    raise MalformedRecord("v needs 3 coordinates", lineno)
                positions.append((float(args[0]), float(args[1]), float(args[2])))
            elif key == "vt":
                if len(args) < 2:
                    raise MalformedRecord("vt needs 2 coordinates", lineno)
                u, v = float(args[0]), float(args[1])
                if not (-_UV_EPS <= u <= 1 + _UV_EPS and -_UV_EPS <= v <= 1 + _UV_EPS):
                    raise MalformedRecord(f"uv ({u}, {v}) outside [0,1]^2", lineno)
                uvs.append((min(max(u, 0.0), 1.0), min(max(v, 0.0), 1.0)))
            elif key == "vn":
                if len(args) < 3:
                    raise MalformedRecord("vn needs 3 components", lineno)
                n = (float(args[0]), float(args[1]), float(args[2]))
                length = float(np.sqrt(n[0] ** 2 + n[1] ** 2 + n[2] ** 2))
                if length < 1e-12:
                    raise MalformedRecord("zero-length normal", lineno)
                if abs(length - 1.0) > 1e-9:  # leave unit input untouched so reparsing is exact
                    n = (n[0] / length, n[1] / length, n[2] / length)
                normals.append(n)
            elif key == "f":
                if len(args) < 3:
                    raise MalformedRecord("face needs at least 3 corners", lineno)
                poly = []
                for token in args:
                    fields = token.split("/")
                    if len(fields) < 2 or fields[1] == "":
                        raise MissingUV(f"line {lineno}: corner '{token}' has no texture coordinate")
                    vi = _resolve(int(fields[0]), len(positions), lineno, "position")
                    ti = _resolve(int(fields[1]), len(uvs), lineno, "uv")
                    if len(fields) > 2 and fields[2] != "":
                        ni = _resolve(int(fields[2]), len(normals), lineno, "normal")
                        have_normal.add(True)
                    else:
                        ni = -1
                        have_normal.add(False)
                    poly.append((vi, ti, ni))
                for k in range(1, len(poly) - 1):
                    corners.extend((poly[0], poly[k], poly[k + 1]))
            elif key in _IGNORED:
                continue
            # unknown keywords are skipped like the ignored ones
        except ValueError as exc:
            raise MalformedRecord(str(exc), lineno) from None

    if not corners:
        raise EmptyMesh("OBJ contains no faces")
    if have_normal == {True, False}:
        raise MissingNormal("some face corners reference normals and others do not")

    tris = np.asarray(corners, dtype=np.int64).reshape(-1, 3, 3)
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if True not in have_normal:
        nrm = area_weighted_normals(pos, tris[:, :, 0])
        tris[:, :, 2] = tris[:, :, 0]
    else:
        nrm = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    return Mesh(pos, np.asarray(uvs, dtype=np.float64).reshape(-1, 2), nrm, tris)


def load_obj(path: str | Path) -> Mesh:
    return parse_obj(Path(path).read_bytes())


def write_obj(mesh: Mesh) -> str:
    """Serialize to OBJ text. Floats use ``repr`` so a reparse is exact."""
    out = []
    out.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.positions.tolist())
    out.extend(f"vt {u!r} {v!r}" for u, v in mesh.uvs.tolist())
    out.extend(f"vn {x!r} {y!r} {z!r}" for x, y, z in mesh.normals.tolist())
    for tri in (mesh.triangles + 1).tolist():
        out.append("f " + " ".join(f"{p}/{t}/{n}" for p, t, n in tri))
    return "\n".join(out) + "\n"


def save_obj(mesh: Mesh, path: str | Path) -> None:
    Path(path).write_text(write_obj(mesh))


def uv_barycentric(mesh: Mesh, tri_index: int, uv: tuple[float, float]) -> Barycentric:
    """Barycentric weights of a UV point with respect to a triangle's UV footprint."""
    a, b, c = mesh.corner_uvs()[tri_index]
    area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    if area == 0.0:
        raise ValueError(f"triangle {tri_index} has zero UV area")
    u, v = uv
    w0 = ((b[0] - u) * (c[1] - v) - (b[1] - v) * (c[0] - u)) / area
    w1 = ((c[0] - u) * (a[1] - v) - (c[1] - v) * (a[0] - u)) / area
    return Barycentric(w0, w1, 1.0 - w0 - w1)


def interpolate(mesh: Mesh, tri_index: int, bary: Barycentric | tuple[float, float, float]):
    """Position and unit normal at barycentric coordinates on a triangle.

    Returns:
        (position, normal) as float64 arrays of shape (3,).

    Raises:
        DegenerateNormal: the weighted normal sum is (near) zero.
    """
    if not 0 <= tri_index < mesh.n_triangles:
        raise IndexError(f"triangle index {tri_index} out of range")
    w = np.asarray(bary, dtype=np.float64)
    if abs(w.sum() - 1.0) > 1e-6:
        raise ValueError(f"barycentric weights sum to {w.sum()}, expected 1")
    tri = mesh.triangles[tri_index]
    p = mesh.positions[tri[:, 0]]
    n = mesh.normals[tri[:, 2]]
    position = w[0] * p[0] + w[1] * p[1] + w[2] * p[2]
    nsum = w[0] * n[0] + w[1] * n[1] + w[2] * n[2]
    length = float(np.linalg.norm(nsum))
    if length < 1e-8:
        raise DegenerateNormal(f"interpolated normal on triangle {tri_index} has length {length:.3g}")
    return position, nsum / length


def triangle_area(points: np.ndarray) -> float:
    """Area of a planar polygon-fan triangle (3, 3) in 3D."""
    return 0.5 * float(np.linalg.norm(np.cross(points[1] - points[0], points[2] - points[0])))
