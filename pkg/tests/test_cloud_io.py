import numpy as np
import pytest

from biequiv.cloud_io import (
    CloudFormatError,
    load_cloud,
    load_mesh,
    load_transform,
    save_cloud,
    save_mesh,
    save_transform,
)
from biequiv.fields import PointCloud, RigidTransform
from biequiv.geometry import icosphere
from conftest import random_rotation

RNG = np.random.default_rng(4321)


def random_cloud_with_normals(n=17):
    normals = RNG.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(RNG.normal(size=(n, 3)), {"normals": normals})


def test_three_point_xyz_file(tmp_path):
    path = tmp_path / "tiny.xyz"
    path.write_text("0 0 0\n1 0 0\n0 1 0\n")
    cloud = load_cloud(path)
    assert len(cloud) == 3
    np.testing.assert_array_equal(cloud.points[1], [1.0, 0.0, 0.0])


@pytest.mark.parametrize("fmt", ["xyz", "ply", "obj"])
def test_round_trip_is_bitwise_exact(tmp_path, fmt):
    cloud = random_cloud_with_normals()
    path = tmp_path / f"cloud.{fmt}"
    save_cloud(cloud, path)
    back = load_cloud(path)
    np.testing.assert_array_equal(back.points, cloud.points)
    np.testing.assert_array_equal(back.features["normals"], cloud.features["normals"])


def test_malformed_row_reports_the_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("0 0 0\n1 oops 0\n")
    with pytest.raises(CloudFormatError, match="bad.xyz:2"):
        load_cloud(path)


def test_inconsistent_column_count_reports_the_line(tmp_path):
    path = tmp_path / "bad.xyz"
    path.write_text("0 0 0\n1 2 3 4 5 6\n")
    with pytest.raises(CloudFormatError, match=":2"):
        load_cloud(path)


def test_unknown_format_is_rejected(tmp_path):
    path = tmp_path / "cloud.bin"
    path.write_text("")
    with pytest.raises(CloudFormatError):
        load_cloud(path)
    with pytest.raises(CloudFormatError):
        save_cloud(PointCloud(np.zeros((1, 3))), tmp_path / "c.xyz", format="npz")


def test_ply_header_is_validated(tmp_path):
    path = tmp_path / "bad.ply"
    path.write_text("not-ply\n")
    with pytest.raises(CloudFormatError, match="magic"):
        load_cloud(path)


def test_obj_cloud_reads_vertex_records_only(tmp_path):
    path = tmp_path / "cloud.obj"
    path.write_text("# comment\nv 1 2 3\nv 4 5 6\nf 1 2 1\n")
    cloud = load_cloud(path)
    assert len(cloud) == 2


def test_mesh_round_trip(tmp_path):
    mesh = icosphere(0)
    path = tmp_path / "mesh.obj"
    save_mesh(mesh, path)
    back = load_mesh(path)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)


def test_quad_faces_are_fanned(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    mesh = load_mesh(path)
    assert mesh.faces.shape == (2, 3)


def test_mesh_requires_faces(tmp_path):
    path = tmp_path / "cloud.obj"
    path.write_text("v 0 0 0\nv 1 0 0\n")
    with pytest.raises(CloudFormatError, match="faces"):
        load_mesh(path)


def test_transform_json_round_trip(tmp_path):
    g = RigidTransform(random_rotation(RNG), RNG.normal(size=3))
    path = tmp_path / "g.json"
    save_transform(g, path, extra={"note": "test"})
    back = load_transform(path)
    np.testing.assert_array_equal(back.matrix(), g.matrix())


def test_transform_schema_is_closed(tmp_path):
    path = tmp_path / "g.json"
    path.write_text('{"schema_version": 2, "matrix": []}')
    with pytest.raises(CloudFormatError, match="schema"):
        load_transform(path)


def test_transform_extra_keys_cannot_shadow_schema(tmp_path):
    g = RigidTransform(np.eye(3), np.zeros(3))
    with pytest.raises(ValueError):
        save_transform(g, tmp_path / "g.json", extra={"matrix": []})
