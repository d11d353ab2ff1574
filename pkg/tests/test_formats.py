import numpy as np
import pytest

from sharpcloud.formats import (
    FormatError,
    read_edges,
    read_obj,
    read_patch_dataset,
    read_ply,
    write_edges,
    write_obj,
    write_patch_dataset,
    write_ply,
)
from sharpcloud.geometry import PointCloud, TriMesh
from sharpcloud.patches import Patch, PatchTransform
from sharpcloud.shapes import cube, wedge


class TestObj:
    def test_single_triangle_round_trip(self, tmp_path):
        mesh = TriMesh(np.array([[0.0, 0.0, 0.0], [1.0, 0.25, 0.0], [0.0, 1.0, 0.125]]),
                       [[0, 1, 2]])
        path = tmp_path / "t.obj"
        write_obj(path, mesh)
        back = read_obj(path)
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.faces, mesh.faces)

    def test_random_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        mesh = TriMesh(rng.uniform(-5, 5, (30, 3)), rng.integers(0, 30, (20, 3)))
        path = tmp_path / "r.obj"
        write_obj(path, mesh)
        back = read_obj(path)
        assert back.vertices.tobytes() == mesh.vertices.tobytes()

    def test_quad_fan_triangulated(self, tmp_path):
        path = tmp_path / "quad.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        mesh = read_obj(path)
        assert len(mesh.faces) == 2
        assert mesh.faces.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_negative_indices(self, tmp_path):
        path = tmp_path / "neg.obj"
        # -1 refers to the most recent vertex
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n")
        mesh = read_obj(path)
        assert mesh.faces.tolist() == [[0, 1, 2]]

    def test_face_with_slashes(self, tmp_path):
        path = tmp_path / "s.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2 3/3\n")
        assert read_obj(path).faces.tolist() == [[0, 1, 2]]

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "bad.obj"
        path.write_text("v 0 0 0\nv oops 0 0\n")
        with pytest.raises(FormatError, match=":2:"):
            read_obj(path)

    def test_out_of_range_face(self, tmp_path):
        path = tmp_path / "oob.obj"
        path.write_text("v 0 0 0\nf 1 2 3\n")
        with pytest.raises(FormatError):
            read_obj(path)


class TestEdges:
    def test_round_trip(self, tmp_path):
        _, edges = wedge()
        path = tmp_path / "w.edges"
        write_edges(path, edges)
        back = read_edges(path)
        assert back.tobytes() == edges.tobytes()

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "c.edges"
        path.write_text("# header\n\n0 0 0 1 0 0  # trailing comment\n")
        back = read_edges(path)
        assert back.shape == (1, 2, 3)

    def test_wrong_count(self, tmp_path):
        path = tmp_path / "bad.edges"
        path.write_text("0 0 0 1 0\n")
        with pytest.raises(FormatError, match=":1:"):
            read_edges(path)


class TestPly:
    def test_xyz_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(1)
        cloud = PointCloud(rng.uniform(-1, 1, (3, 3)))
        path = tmp_path / "c.ply"
        write_ply(path, cloud)
        back = read_ply(path)
        assert back.points.tobytes() == cloud.points.tobytes()
        assert back.edge_dist is None and back.is_edge is None

    def test_full_attributes_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        cloud = PointCloud(rng.uniform(-1, 1, (10, 3)),
                           edge_dist=rng.uniform(0, 0.3, 10),
                           is_edge=rng.integers(0, 2, 10).astype(bool))
        path = tmp_path / "f.ply"
        write_ply(path, cloud)
        back = read_ply(path)
        assert back.points.tobytes() == cloud.points.tobytes()
        assert back.edge_dist.tobytes() == cloud.edge_dist.tobytes()
        assert np.array_equal(back.is_edge, cloud.is_edge)

    def test_unknown_properties_skipped(self, tmp_path):
        path = tmp_path / "u.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 2\n"
            "property float x\nproperty float y\nproperty float z\n"
            "property float confidence\nproperty uchar is_edge\n"
            "end_header\n"
            "0 0 0 0.5 1\n1 2 3 0.25 0\n")
        cloud = read_ply(path)
        assert np.allclose(cloud.points, [[0, 0, 0], [1, 2, 3]])
        assert cloud.is_edge.tolist() == [True, False]
        assert cloud.edge_dist is None

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "m.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 3\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n"
            "0 0 0\n1 1 1\n")
        with pytest.raises(FormatError, match="3"):
            read_ply(path)

    def test_row_width_mismatch(self, tmp_path):
        path = tmp_path / "w.ply"
        path.write_text(
            "ply\nformat ascii 1.0\nelement vertex 1\n"
            "property float x\nproperty float y\nproperty float z\nend_header\n"
            "0 0\n")
        with pytest.raises(FormatError, match="values"):
            read_ply(path)

    def test_missing_magic(self, tmp_path):
        path = tmp_path / "n.ply"
        path.write_text("not a ply\n")
        with pytest.raises(FormatError, match="magic"):
            read_ply(path)


class TestPatchDataset:
    def make_patches(self, n=3):
        rng = np.random.default_rng(3)
        mesh, edges = cube()
        patches = []
        for i in range(n):
            pts = rng.normal(size=(64, 3))
            pts -= pts.mean(axis=0)
            pts /= np.max(np.linalg.norm(pts, axis=1))
            patches.append(Patch(
                points=pts, centroid_index=i * 7,
                transform=PatchTransform(translation=rng.uniform(-1, 1, 3),
                                         scale=float(rng.uniform(0.5, 2))),
                source_indices=rng.integers(0, 1000, 64),
                gt_triangles=mesh.triangles[: 2 + i],
                gt_segments=edges[: 1 + i]))
        return patches

    def test_round_trip_bit_exact(self, tmp_path):
        patches = self.make_patches()
        path = tmp_path / "d.scpd"
        write_patch_dataset(path, patches, mesh_id="cube")
        back, mesh_id = read_patch_dataset(path)
        assert mesh_id == "cube"
        assert len(back) == len(patches)
        for a, b in zip(patches, back):
            assert a.points.tobytes() == b.points.tobytes()
            assert a.gt_triangles.tobytes() == b.gt_triangles.tobytes()
            assert a.gt_segments.tobytes() == b.gt_segments.tobytes()
            assert np.array_equal(a.source_indices, b.source_indices)
            assert a.transform.scale == b.transform.scale
            assert a.centroid_index == b.centroid_index

    def test_write_is_deterministic(self, tmp_path):
        patches = self.make_patches()
        p1, p2 = tmp_path / "a.scpd", tmp_path / "b.scpd"
        write_patch_dataset(p1, patches, "m")
        write_patch_dataset(p2, patches, "m")
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_rejected(self, tmp_path):
        patches = self.make_patches(1)
        path = tmp_path / "t.scpd"
        write_patch_dataset(path, patches, "m")
        data = path.read_bytes()
        path.write_bytes(data[:-10])
        with pytest.raises(FormatError, match="truncated"):
            read_patch_dataset(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.scpd"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(FormatError, match="not a patch dataset"):
            read_patch_dataset(path)
