"""Source radiance field: Gaussian splats generated from a textured mesh or
read from a 3DGS PLY file, plus nearest-neighbour densification."""

from __future__ import annotations

import re
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from numba import njit
from scipy.spatial import cKDTree
from scipy.special import expit, logit

from .errors import BadHeader, EmptyCloud, IterationCapExceeded, MissingProperty, TruncatedBody
from .geometry import Mesh
from .raster import rasterize
from .texture import Texture, sample_bilinear

SH_C0 = 0.28209479177387814
NORMAL_SCALE_RATIO = 0.1
# finite differences longer than this multiple of the triangle Jacobian are chart jumps
SEAM_RATIO = 4.0

PLY_FIELDS = ("x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
              "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3")
_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass(frozen=True)
class GaussianSplat:
    id: int
    position: tuple[float, float, float]
    normal: tuple[float, float, float]
    scale: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # (w, x, y, z)
    color: tuple[float, float, float]
    opacity: float


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions (w, x, y, z) to (N, 3, 3) rotation matrices."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=np.float64), -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """(N, 3, 3) rotation matrices to (N, 4) unit quaternions with w >= 0."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    cand = np.stack([
        1 + tr,
        1 + m[:, 0, 0] - m[:, 1, 1] - m[:, 2, 2],
        1 - m[:, 0, 0] + m[:, 1, 1] - m[:, 2, 2],
        1 - m[:, 0, 0] - m[:, 1, 1] + m[:, 2, 2],
    ], -1)
    pick = np.argmax(cand, axis=1)
    q = np.empty((len(m), 4))
    s = np.sqrt(np.maximum(cand[np.arange(len(m)), pick], 1e-300)) * 2
    for k in range(4):
        sel = pick == k
        mm, ss = m[sel], s[sel]
        if k == 0:
            q[sel] = np.stack([0.25 * ss, (mm[:, 2, 1] - mm[:, 1, 2]) / ss,
                               (mm[:, 0, 2] - mm[:, 2, 0]) / ss, (mm[:, 1, 0] - mm[:, 0, 1]) / ss], -1)
        elif k == 1:
            q[sel] = np.stack([(mm[:, 2, 1] - mm[:, 1, 2]) / ss, 0.25 * ss,
                               (mm[:, 0, 1] + mm[:, 1, 0]) / ss, (mm[:, 0, 2] + mm[:, 2, 0]) / ss], -1)
        elif k == 2:
            q[sel] = np.stack([(mm[:, 0, 2] - mm[:, 2, 0]) / ss, (mm[:, 0, 1] + mm[:, 1, 0]) / ss,
                               0.25 * ss, (mm[:, 1, 2] + mm[:, 2, 1]) / ss], -1)
        else:
            q[sel] = np.stack([(mm[:, 1, 0] - mm[:, 0, 1]) / ss, (mm[:, 0, 2] + mm[:, 2, 0]) / ss,
                               (mm[:, 1, 2] + mm[:, 2, 1]) / ss, 0.25 * ss], -1)
    q[q[:, 0] < 0] *= -1
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _unit(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    length = np.linalg.norm(v, axis=-1)
    return v / np.where(length > 0, length, 1.0)[..., None], length


def surface_frames(normals: np.ndarray, tangents: np.ndarray) -> np.ndarray:
    """Orthonormal (tangent, bitangent, normal) frames as rotation matrix columns."""
    n, _ = _unit(normals)
    t = tangents - np.sum(tangents * n, axis=1, keepdims=True) * n
    t, tlen = _unit(t)
    bad = tlen < 1e-12 * np.maximum(np.linalg.norm(tangents, axis=1), 1e-300)
    if bad.any():
        # any perpendicular will do
        helper = np.where(np.abs(n[bad, 0:1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
        t[bad] = _unit(np.cross(n[bad], helper))[0]
    b = np.cross(n, t)
    return np.stack([t, b, n], axis=-1)


@dataclass(eq=False)
class SplatCloud:
    """Structure-of-arrays Gaussian cloud. Splat ids are row indices.

    ``raw`` optionally keeps the undecoded PLY records so a file can be
    written back bit for bit.
    """

    positions: np.ndarray   # (N, 3)
    normals: np.ndarray     # (N, 3) unit
    scales: np.ndarray      # (N, 3) standard deviations along (tangent, bitangent, normal)
    rotations: np.ndarray   # (N, 4) unit quaternion (w, x, y, z), local -> model
    colors: np.ndarray      # (N, 3) in [0, 1]
    opacities: np.ndarray   # (N,) in [0, 1]
    raw: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.normals = _unit(np.asarray(self.normals, dtype=np.float64).reshape(n, 3))[0]
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = _unit(np.asarray(self.rotations, dtype=np.float64).reshape(n, 4))[0]
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64).reshape(n, 3)
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float64).reshape(n)
        if n and not np.all(self.scales > 0):
            raise ValueError("splat scales must be positive")
        if n and (self.colors.min() < 0 or self.colors.max() > 1):
            raise ValueError("splat colors must lie in [0, 1]")
        if n and (self.opacities.min() < 0 or self.opacities.max() > 1):
            raise ValueError("splat opacities must lie in [0, 1]")
        for arr in (self.positions, self.normals, self.scales, self.rotations, self.colors, self.opacities):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> GaussianSplat:
        i = int(i)
        if not 0 <= i < len(self):
            raise IndexError(i)
        return GaussianSplat(
            id=i,
            position=tuple(self.positions[i].tolist()),
            normal=tuple(self.normals[i].tolist()),
            scale=tuple(self.scales[i].tolist()),
            orientation=tuple(self.rotations[i].tolist()),
            color=tuple(self.colors[i].tolist()),
            opacity=float(self.opacities[i]),
        )

    @classmethod
    def from_splats(cls, splats) -> "SplatCloud":
        splats = list(splats)
        return cls(
            positions=[s.position for s in splats],
            normals=[s.normal for s in splats],
            scales=[s.scale for s in splats],
            rotations=[s.orientation for s in splats],
            colors=[s.color for s in splats],
            opacities=[s.opacity for s in splats],
        )

    @cached_property
    def rotation_matrices(self) -> np.ndarray:
        return quat_to_matrix(self.rotations)

    @cached_property
    def ray_transform(self) -> np.ndarray:
        """(N, 3, 3) matrices taking model-space offsets to unit-Gaussian space."""
        return np.ascontiguousarray(np.swapaxes(self.rotation_matrices, 1, 2) / self.scales[:, :, None])

    @cached_property
    def aabb_half_extents(self) -> np.ndarray:
        """Half widths of the axis-aligned box around each 3-sigma ellipsoid."""
        rs = self.rotation_matrices * self.scales[:, None, :]
        return 3.0 * np.sqrt(np.sum(rs * rs, axis=2))

    @cached_property
    def radii(self) -> np.ndarray:
        """3 * max(scale) per splat."""
        return 3.0 * self.scales.max(axis=1)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            raise EmptyCloud("cloud has no splats")
        r = self.radii[:, None]
        return (self.positions - r).min(axis=0), (self.positions + r).max(axis=0)


@njit(cache=True)
def _sample_colors(img, uv, out):
    tmp = np.empty(img.shape[2])
    for i in range(uv.shape[0]):
        sample_bilinear(img, uv[i, 0], uv[i, 1], tmp)
        for k in range(img.shape[2]):
            out[i, k] = tmp[k]


def _jacobians(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-triangle dP/du and dP/dv, zero where the UV map is singular."""
    p = mesh.corner_positions()
    t = mesh.corner_uvs()
    e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    d1, d2 = t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    ok = det != 0
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)[:, None]
    dpdu = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) * inv
    dpdv = (e2 * d1[:, 0:1] - e1 * d2[:, 0:1]) * inv
    return dpdu, dpdv


def _finite_difference(pos, valid, axis):
    """Forward difference along +u (axis=1) or +v (axis=0, i.e. up one image row),
    backward where the forward neighbour is invalid. NaN where neither exists."""
    h, w = valid.shape
    fwd = np.full(pos.shape, np.nan)
    bwd = np.full(pos.shape, np.nan)
    if axis == 1:
        d = pos[:, 1:] - pos[:, :-1]
        ok = valid[:, 1:] & valid[:, :-1]
        fwd[:, :-1][ok] = d[ok]
        bwd[:, 1:][ok] = d[ok]
    else:
        d = pos[:-1] - pos[1:]  # row r-1 is one step up in v
        ok = valid[:-1] & valid[1:]
        fwd[1:][ok] = d[ok]
        bwd[:-1][ok] = d[ok]
    return np.where(np.isnan(fwd), bwd, fwd)


def splats_from_mesh(mesh: Mesh, texture: Texture, supersample: int = 1, threads: int = 1) -> SplatCloud:
    """One Gaussian per sample of a (W*s) x (H*s) grid laid over UV space.

    Samples whose centre is inside a UV triangle take the surface position and
    normal there, a bilinear texture colour and the texture alpha as opacity.
    The footprint follows finite differences of the sampled position map
    along u and v; the normal axis is a tenth of the smaller of the two.

    Raises:
        EmptyCloud: no sample centre falls inside any UV triangle.
    """
    if supersample < 1:
        raise ValueError("supersample must be >= 1")
    w, h = texture.width * supersample, texture.height * supersample
    pm = rasterize(mesh, w, h, threads)
    valid = pm.valid
    if not valid.any():
        raise EmptyCloud(f"no {w}x{h} sample centre lies inside a UV triangle")

    pos = pm.positions.astype(np.float64)
    rows, cols = np.nonzero(valid)
    tri = pm.triangle[rows, cols]
    dpdu, dpdv = _jacobians(mesh)
    jac_u = dpdu[tri] / w
    jac_v = dpdv[tri] / h

    fd_u = _finite_difference(pos, valid, axis=1)[rows, cols]
    fd_v = _finite_difference(pos, valid, axis=0)[rows, cols]
    tangents = []
    scales = []
    for fd, jac in ((fd_u, jac_u), (fd_v, jac_v)):
        jl = np.linalg.norm(jac, axis=1)
        fl = np.linalg.norm(np.nan_to_num(fd), axis=1)
        use_jac = np.isnan(fd[:, 0]) | ((jl > 0) & (fl > SEAM_RATIO * jl))
        vec = np.where(use_jac[:, None], jac, np.nan_to_num(fd))
        tangents.append(vec)
        scales.append(np.linalg.norm(vec, axis=1))
    floor = 1e-7 * max(mesh.bbox_diagonal(), 1e-12)
    su = np.maximum(scales[0], floor)
    sv = np.maximum(scales[1], floor)
    sn = np.maximum(NORMAL_SCALE_RATIO * np.minimum(su, sv), floor)

    normals = pm.normals[rows, cols].astype(np.float64)
    frames = surface_frames(normals, tangents[0])

    uv = np.stack([(cols + 0.5) / w, (h - rows - 0.5) / h], axis=1)
    rgba = np.empty((len(uv), 4))
    _sample_colors(texture.to_float(), uv, rgba)
    return SplatCloud(
        positions=pos[rows, cols],
        normals=frames[:, :, 2],
        scales=np.stack([su, sv, sn], axis=1),
        rotations=matrix_to_quat(frames),
        colors=np.clip(rgba[:, :3], 0.0, 1.0),
        opacities=np.clip(rgba[:, 3], 0.0, 1.0),
    )


def nearest_neighbor_distances(positions: np.ndarray, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Distance to and index of each point's nearest other point (inf, -1 if alone)."""
    if len(positions) < 2:
        return np.full(len(positions), np.inf), np.full(len(positions), -1)
    d, j = cKDTree(positions).query(positions, k=2, workers=workers)
    return d[:, 1], j[:, 1]


def default_spacing(cloud: SplatCloud, workers: int = 1) -> float:
    """1.5 x the median nearest-neighbour distance."""
    d, _ = nearest_neighbor_distances(cloud.positions, workers)
    d = d[np.isfinite(d)]
    return float(1.5 * np.median(d)) if len(d) else float("inf")


def _midpoints(cloud_arrays: dict, pairs: np.ndarray) -> dict:
    a, b = pairs[:, 0], pairs[:, 1]
    n = cloud_arrays["normals"][a] + cloud_arrays["normals"][b]
    n_unit, n_len = _unit(n)
    n_unit[n_len < 1e-12] = cloud_arrays["normals"][a][n_len < 1e-12]
    tangent = quat_to_matrix(cloud_arrays["rotations"][a])[:, :, 0]
    frames = surface_frames(n_unit, tangent)
    return {
        "positions": 0.5 * (cloud_arrays["positions"][a] + cloud_arrays["positions"][b]),
        "normals": n_unit,
        "scales": np.maximum(cloud_arrays["scales"][a], cloud_arrays["scales"][b]),
        "rotations": matrix_to_quat(frames),
        "colors": 0.5 * (cloud_arrays["colors"][a] + cloud_arrays["colors"][b]),
        "opacities": 0.5 * (cloud_arrays["opacities"][a] + cloud_arrays["opacities"][b]),
    }


def densify(cloud: SplatCloud, target_spacing: float | None = None, max_iterations: int = 16,
            workers: int = 1) -> SplatCloud:
    """Insert midpoint splats until no splat's nearest neighbour is farther
    than ``target_spacing`` (default: 1.5 x median nearest-neighbour distance).

    Each round pairs every splat that violates the spacing with its nearest
    neighbour and inserts one splat halfway between them (averaged position,
    normal, colour and opacity; component-wise max scale). Existing splats and
    ids are untouched, new ids extend the range. If ``max_iterations`` rounds do
    not close every gap an :class:`IterationCapExceeded` warning is issued and
    the partial result is returned.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot densify an empty cloud")
    if len(cloud) == 1:
        return cloud
    if target_spacing is None:
        target_spacing = default_spacing(cloud, workers)
    if not target_spacing > 0:
        raise ValueError("target_spacing must be positive")

    names = ("positions", "normals", "scales", "rotations", "colors", "opacities")
    arrays = {k: np.array(getattr(cloud, k)) for k in names}
    added = False
    for _ in range(max_iterations):
        d, j = nearest_neighbor_distances(arrays["positions"], workers)
        far = np.nonzero(d > target_spacing)[0]
        if len(far) == 0:
            break
        pairs = np.unique(np.sort(np.stack([far, j[far]], axis=1), axis=1), axis=0)
        new = _midpoints(arrays, pairs)
        arrays = {k: np.concatenate([arrays[k], new[k]]) for k in names}
        added = True
    else:
        d, _ = nearest_neighbor_distances(arrays["positions"], workers)
        if np.any(d > target_spacing):
            warnings.warn(IterationCapExceeded(max_iterations, float(d.max())), stacklevel=2)
    if not added:
        return cloud
    return SplatCloud(**arrays)


def _parse_header(data: bytes):
    if not data.startswith(b"ply"):
        raise BadHeader("missing 'ply' magic")
    end = data.find(b"end_header")
    if end < 0:
        raise BadHeader("missing end_header")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise BadHeader("header not terminated")
    lines = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1:]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise BadHeader(f"bad element line: {line!r}")
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise BadHeader("property before any element")
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[-1]))
            elif parts[1] in _PLY_TYPES and len(parts) == 3:
                elements[-1][2].append((_PLY_TYPES[parts[1]], parts[2]))
            else:
                raise BadHeader(f"bad property line: {line!r}")
    if fmt != ["binary_little_endian", "1.0"]:
        raise BadHeader(f"unsupported PLY format {fmt}")
    return elements, nl + 1


def parse_splat_ply(data: bytes) -> SplatCloud:
    """Decode a binary little-endian 3DGS PLY file.

    Colour comes from the degree-0 spherical harmonic, ``0.5 + SH_C0 * f_dc``
    clamped to [0, 1]; opacity is the logistic of the stored value, scales are
    exponentiated and quaternions normalized. Property order follows the
    header. Splats stored with a zero normal take the rotated axis of their
    smallest scale.
    """
    elements, offset = _parse_header(data)
    names = [e[0] for e in elements]
    if "vertex" not in names:
        raise BadHeader("no vertex element")
    for name, count, props in elements:
        if any(t == "list" for t, _ in props):
            raise BadHeader(f"list property in element '{name}' is not supported")
        dtype = np.dtype([(p, "<" + t) for t, p in props])
        if name == "vertex":
            vertex_dtype, vertex_count = dtype, count
            break
        offset += dtype.itemsize * count
    field_names = vertex_dtype.names or ()
    for field in PLY_FIELDS:
        if field not in field_names:
            raise MissingProperty(f"vertex property '{field}' missing")
    available = (len(data) - offset) // vertex_dtype.itemsize if len(data) > offset else 0
    if available < vertex_count:
        raise TruncatedBody(f"header declares {vertex_count} vertices, body holds {available}")
    if vertex_count == 0:
        raise EmptyCloud("PLY declares zero vertices")
    raw = np.frombuffer(data, dtype=vertex_dtype, count=vertex_count, offset=offset).copy()
    return decode_splat_records(raw)


def decode_splat_records(raw: np.ndarray) -> SplatCloud:
    f = {k: raw[k].astype(np.float64) for k in PLY_FIELDS}
    colors = np.clip(0.5 + SH_C0 * np.stack([f["f_dc_0"], f["f_dc_1"], f["f_dc_2"]], axis=1), 0.0, 1.0)
    scales = np.exp(np.stack([f["scale_0"], f["scale_1"], f["scale_2"]], axis=1))
    quats = np.stack([f["rot_0"], f["rot_1"], f["rot_2"], f["rot_3"]], axis=1)
    qlen = np.linalg.norm(quats, axis=1)
    quats[qlen == 0] = (1.0, 0.0, 0.0, 0.0)
    normals = np.stack([f["nx"], f["ny"], f["nz"]], axis=1)
    missing = np.linalg.norm(normals, axis=1) < 1e-8
    if missing.any():
        rot = quat_to_matrix(_unit(quats[missing])[0])
        axis = np.argmin(scales[missing], axis=1)
        normals[missing] = rot[np.arange(len(axis)), :, axis]
    return SplatCloud(
        positions=np.stack([f["x"], f["y"], f["z"]], axis=1),
        normals=normals,
        scales=scales,
        rotations=quats,
        colors=colors,
        opacities=expit(f["opacity"]),
        raw=raw,
    )


def load_splat_ply(path: str | Path) -> SplatCloud:
    return parse_splat_ply(Path(path).read_bytes())


def encode_splat_records(cloud: SplatCloud) -> np.ndarray:
    """Standard 3DGS float32 layout for a cloud without stored raw records."""
    raw = np.zeros(len(cloud), dtype=[(k, "<f4") for k in PLY_FIELDS])
    for k, col in zip("xyz", cloud.positions.T):
        raw[k] = col
    for k, col in zip(("nx", "ny", "nz"), cloud.normals.T):
        raw[k] = col
    eps = 1e-6
    dc = (np.clip(cloud.colors, 0.0, 1.0) - 0.5) / SH_C0
    for i in range(3):
        raw[f"f_dc_{i}"] = dc[:, i]
        raw[f"scale_{i}"] = np.log(cloud.scales[:, i])
    raw["opacity"] = logit(np.clip(cloud.opacities, eps, 1 - eps))
    for i in range(4):
        raw[f"rot_{i}"] = cloud.rotations[:, i]
    return raw


_NP_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
              "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


def write_splat_ply(cloud: SplatCloud) -> bytes:
    """Serialize; stored raw records are written back verbatim in their original layout."""
    raw = cloud.raw if cloud.raw is not None and len(cloud.raw) == len(cloud) else encode_splat_records(cloud)
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(raw)}"]
    for name in raw.dtype.names:
        code = re.sub(r"^[<>=|]", "", raw.dtype[name].str)
        header.append(f"property {_NP_TO_PLY[code]} {name}")
    header.append("end_header")
    le = raw.astype(raw.dtype.newbyteorder("<"), copy=False)
    return ("\n".join(header) + "\n").encode("ascii") + le.tobytes()


def save_splat_ply(cloud: SplatCloud, path: str | Path) -> None:
    Path(path).write_bytes(write_splat_ply(cloud))
