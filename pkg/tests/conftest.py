"""Shared fixtures and small independent builders for the test suite."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from splatproj.geometry import Mesh
from splatproj.procedural import checker_gradient, uv_sphere
from splatproj.splat import PLY_FIELDS, SplatCloud


def make_ply(records: np.ndarray, declared: int | None = None, fields=PLY_FIELDS) -> bytes:
    """Hand-rolled binary PLY writer (independent of the package writer)."""
    n = len(records) if declared is None else declared
    head = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    head += [f"property float {f}" for f in fields]
    head.append("end_header")
    body = b"".join(struct.pack("<" + "f" * len(fields), *row) for row in records)
    return ("\n".join(head) + "\n").encode() + body


def triangle_mesh(uvs, positions=None, normals=None) -> Mesh:
    """Single triangle with the given UVs; positions default to the UVs at z=0."""
    uvs = np.asarray(uvs, dtype=np.float64)
    pos = np.c_[uvs, np.zeros(3)] if positions is None else np.asarray(positions, dtype=np.float64)
    nrm = np.array([[0.0, 0.0, 1.0]] * 3) if normals is None else np.asarray(normals, dtype=np.float64)
    return Mesh(pos, uvs, nrm, np.array([[(0, 0, 0), (1, 1, 1), (2, 2, 2)]]))


def single_splat_cloud(position=(0.0, 0.0, 0.0), normal=(0.0, 0.0, 1.0), scale=(1.0, 1.0, 1.0),
                       color=(0.0, 1.0, 0.0), opacity=1.0, rotation=(1.0, 0.0, 0.0, 0.0)) -> SplatCloud:
    return SplatCloud(positions=[position], normals=[normal], scales=[scale], rotations=[rotation],
                      colors=[color], opacities=[opacity])


def random_cloud(rng: np.random.Generator, n: int, extent: float = 1.0) -> SplatCloud:
    q = rng.normal(size=(n, 4))
    nrm = rng.normal(size=(n, 3))
    return SplatCloud(
        positions=rng.uniform(-extent, extent, size=(n, 3)),
        normals=nrm / np.linalg.norm(nrm, axis=1, keepdims=True),
        scales=rng.uniform(0.01, 0.2, size=(n, 3)) * extent,
        rotations=q / np.linalg.norm(q, axis=1, keepdims=True),
        colors=rng.uniform(0, 1, size=(n, 3)),
        opacities=rng.uniform(0.05, 1.0, size=n),
    )


def quat_matrix_scalar(w, x, y, z):
    """Rotation matrix of a unit quaternion, written out term by term."""
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@pytest.fixture(scope="session")
def sphere():
    return uv_sphere(40, 26)


@pytest.fixture(scope="session")
def checker256():
    return checker_gradient(256)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def subset(cloud: SplatCloud, idx) -> SplatCloud:
    return SplatCloud(cloud.positions[idx], cloud.normals[idx], cloud.scales[idx], cloud.rotations[idx],
                      cloud.colors[idx], cloud.opacities[idx])


def random_instance(rng: np.random.Generator):
    """Small randomized transfer problem: (target mesh, source cloud, texture size).

    Meshes have 2 to 200 triangles, clouds 1 to 2000 splats and textures 16^2 to 64^2.
    """
    from splatproj.procedural import deform, random_texture, unit_quad
    from splatproj.splat import densify, splats_from_mesh

    def mesh():
        if rng.random() < 0.15:
            return unit_quad()
        segments = int(rng.integers(3, 11))
        rings = int(rng.integers(2, min(10, 100 // segments + 1) + 1))
        return deform(uv_sphere(segments, rings), rng.uniform(0.7, 1.3, 3), rng.uniform(-0.2, 0.2))

    source, target = mesh(), mesh()
    if rng.random() < 0.5:
        target = source
    size = int(rng.integers(16, 65))
    if rng.random() < 0.2:
        cloud = random_cloud(rng, int(rng.integers(1, 300)))
    else:
        tex_size = int(rng.integers(16, 65))
        cloud = splats_from_mesh(source, random_texture(tex_size, tex_size, rng))
        if rng.random() < 0.5:
            cloud = densify(cloud, max_iterations=2) if len(cloud) < 1500 else cloud
        if len(cloud) > 2000 or rng.random() < 0.3:
            keep = int(rng.integers(1, min(len(cloud), 2000) + 1))
            cloud = subset(cloud, np.sort(rng.choice(len(cloud), keep, replace=False)))
    return target, cloud, size


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
