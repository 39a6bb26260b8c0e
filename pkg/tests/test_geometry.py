"""OBJ parsing, serialization and barycentric interpolation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatproj.errors import (DegenerateNormal, EmptyMesh, MalformedRecord, MissingNormal, MissingUV)
from splatproj.geometry import (Barycentric, Mesh, interpolate, parse_obj, triangle_area, uv_barycentric,
                                write_obj)
from splatproj.procedural import uv_sphere

from conftest import triangle_mesh

TRI_OBJ = """\
v 0 0 0
v 1 0 0
v 0 1 0
vt 0 0
vt 1 0
vt 0 1
vn 0 0 1
vn 0 0 1
vn 0 0 1
f 1/1/1 2/2/2 3/3/3
"""

QUAD_OBJ = """\
v 0 0 0
v 2 0 0
v 2 1 0
v 0 1 0
vt 0 0
vt 1 0
vt 1 1
vt 0 1
vn 0 0 1
vn 0 0 1
vn 0 0 1
vn 0 0 1
f 1/1/1 2/2/2 3/3/3 4/4/4
"""


class TestParseObj:
    def test_single_triangle(self):
        mesh = parse_obj(TRI_OBJ)
        assert mesh.n_triangles == 1
        np.testing.assert_array_equal(mesh.triangles[0], [[0, 0, 0], [1, 1, 1], [2, 2, 2]])

    def test_quad_is_fan_triangulated(self):
        mesh = parse_obj(QUAD_OBJ)
        assert mesh.n_triangles == 2
        np.testing.assert_array_equal(mesh.triangles[:, :, 0], [[0, 1, 2], [0, 2, 3]])

    def test_missing_normals_are_computed(self):
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n"
        mesh = parse_obj(text)
        np.testing.assert_allclose(mesh.normals[mesh.triangles[0, :, 2]], [[0, 0, 1]] * 3)

    def test_negative_indices(self):
        text = TRI_OBJ.replace("f 1/1/1 2/2/2 3/3/3", "f -3/-3/-3 -2/-2/-2 -1/-1/-1")
        np.testing.assert_array_equal(parse_obj(text).triangles, parse_obj(TRI_OBJ).triangles)

    def test_bytes_input_and_comments(self):
        mesh = parse_obj(("# header\no cube\n" + TRI_OBJ + "s off\n").encode())
        assert mesh.n_triangles == 1

    def test_missing_uv(self):
        with pytest.raises(MissingUV):
            parse_obj(TRI_OBJ.replace("f 1/1/1 2/2/2 3/3/3", "f 1//1 2//2 3//3"))

    def test_mixed_normals(self):
        with pytest.raises(MissingNormal):
            parse_obj(TRI_OBJ + "f 1/1 2/2 3/3\n")

    def test_empty(self):
        with pytest.raises(EmptyMesh):
            parse_obj("v 0 0 0\nvt 0 0\n")

    @pytest.mark.parametrize("line", ["v 1 x 2", "f 1/1/1 2/2/2", "vt 0.5", "f 1/1/1 2/2/2 9/3/3",
                                      "vt 1.5 0.5", "vn 0 0 0"])
    def test_malformed_carries_line_number(self, line):
        text = TRI_OBJ + line + "\n"
        with pytest.raises(MalformedRecord) as info:
            parse_obj(text)
        assert info.value.line == len(text.splitlines())
        assert info.value.stage == "mesh"


class TestRoundTrip:
    def test_sphere_fixpoint(self):
        source = uv_sphere(12, 7)
        mesh = parse_obj(write_obj(source))
        np.testing.assert_allclose(mesh.positions, source.positions, atol=1e-12)
        again = parse_obj(write_obj(mesh))
        np.testing.assert_array_equal(again.triangles, mesh.triangles)
        for name in ("positions", "uvs", "normals"):
            np.testing.assert_allclose(getattr(again, name), getattr(mesh, name), atol=1e-6)
        assert write_obj(again) == write_obj(mesh)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(3, 9), st.floats(0.1, 10.0))
    def test_convex_polygon_area_preserved(self, k, radius):
        ang = np.sort(np.random.default_rng(k).uniform(0, 2 * np.pi, k))
        pts = np.c_[radius * np.cos(ang), radius * np.sin(ang), np.zeros(k)]
        uv = (pts[:, :2] / radius + 1) / 2
        lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in pts.tolist()] + [f"vt {u!r} {v!r}" for u, v in uv.tolist()]
        lines.append("f " + " ".join(f"{i}/{i}" for i in range(1, k + 1)))
        mesh = parse_obj("\n".join(lines))
        fan = sum(triangle_area(t) for t in mesh.corner_positions())
        x, y = pts[:, 0], pts[:, 1]
        shoelace = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        assert fan == pytest.approx(shoelace, rel=1e-6)


class TestInterpolate:
    def test_vertex(self):
        mesh = parse_obj(TRI_OBJ)
        p, n = interpolate(mesh, 0, Barycentric(1.0, 0.0, 0.0))
        np.testing.assert_array_equal(p, mesh.positions[0])
        np.testing.assert_array_equal(n, [0, 0, 1])

    def test_centroid(self):
        h = np.sqrt(3.0) / 2
        mesh = triangle_mesh([(0, 0), (1, 0), (0.5, h)])
        p, n = interpolate(mesh, 0, (1 / 3, 1 / 3, 1 / 3))
        np.testing.assert_allclose(p, [0.5, h / 3, 0.0], atol=1e-15)
        np.testing.assert_allclose(n, [0, 0, 1])

    def test_opposing_normals_degenerate(self):
        # 0.25 * z + 0.25 * z + 0.5 * (-z) = 0
        mesh = triangle_mesh([(0, 0), (1, 0), (0, 1)], normals=[(0, 0, 1), (0, 0, 1), (0, 0, -1)])
        with pytest.raises(DegenerateNormal):
            interpolate(mesh, 0, (0.25, 0.25, 0.5))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
    def test_affine_in_barycentrics(self, a, b, seed):
        if a + b > 1:
            a, b = 1 - a, 1 - b
        rng = np.random.default_rng(seed)
        pos = rng.normal(size=(3, 3))
        mesh = triangle_mesh([(0, 0), (1, 0), (0, 1)], positions=pos)
        p, n = interpolate(mesh, 0, (a, b, 1 - a - b))
        np.testing.assert_allclose(p, a * pos[0] + b * pos[1] + (1 - a - b) * pos[2], atol=1e-12)
        assert np.linalg.norm(n) == pytest.approx(1.0)

    def test_uv_barycentric_reproduces_uv(self):
        mesh = triangle_mesh([(0.1, 0.2), (0.9, 0.3), (0.4, 0.8)])
        w = uv_barycentric(mesh, 0, (0.45, 0.4))
        assert w.inside()
        np.testing.assert_allclose(np.dot(w, mesh.corner_uvs()[0]), [0.45, 0.4])
        assert not uv_barycentric(mesh, 0, (0.0, 0.0)).inside()


class TestMesh:
    def test_read_only_arrays(self):
        mesh = parse_obj(TRI_OBJ)
        with pytest.raises(ValueError):
            mesh.positions[0, 0] = 5.0

    def test_index_out_of_range(self):
        with pytest.raises(Exception):
            Mesh(np.zeros((3, 3)), np.zeros((3, 2)), np.ones((1, 3)), np.array([[(0, 0, 0), (1, 1, 0), (5, 2, 0)]]))
