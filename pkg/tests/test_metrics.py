import numpy as np
import pytest

from sharpcloud.geometry import GeometryError, mesh_closest_points
from sharpcloud.metrics import (
    distance_histogram,
    edge_error_stats,
    surface_error_stats,
)
from sharpcloud.shapes import cube

from oracles import sample_triangle_distance


class TestSurfaceStats:
    def test_points_on_mesh(self):
        mesh, _ = cube()
        st = surface_error_stats(mesh.vertices, mesh)
        assert st.mean == pytest.approx(0.0, abs=1e-12)
        assert st.rms == pytest.approx(0.0, abs=1e-12)

    def test_two_point_arithmetic(self):
        mesh, _ = cube()
        pts = np.array([[0.0, 0.0, 1.3], [0.0, 0.0, 1.4]])   # 0.3 and 0.4 above +z face
        st = surface_error_stats(pts, mesh)
        assert st.mean == pytest.approx(0.35, abs=1e-12)
        assert st.rms == pytest.approx(np.sqrt((0.09 + 0.16) / 2), abs=1e-12)

    def test_matches_per_point_oracle(self):
        mesh, _ = cube()
        rng = np.random.default_rng(0)
        pts = rng.uniform(-1.5, 1.5, size=(20, 3))
        per_point = []
        for p in pts:
            per_point.append(min(sample_triangle_distance(p, t) for t in mesh.triangles))
        st = surface_error_stats(pts, mesh)
        assert st.mean == pytest.approx(float(np.mean(per_point)), abs=1e-4)
        assert st.rms == pytest.approx(float(np.sqrt(np.mean(np.square(per_point)))), abs=1e-4)

    def test_rms_at_least_mean(self):
        mesh, _ = cube()
        rng = np.random.default_rng(1)
        st = surface_error_stats(rng.uniform(-2, 2, (100, 3)), mesh)
        assert st.rms >= st.mean

    def test_permutation_invariant(self):
        mesh, _ = cube()
        rng = np.random.default_rng(2)
        pts = rng.uniform(-2, 2, (50, 3))
        a = surface_error_stats(pts, mesh)
        b = surface_error_stats(pts[rng.permutation(50)], mesh)
        assert a.mean == pytest.approx(b.mean, abs=1e-12)
        assert a.rms == pytest.approx(b.rms, abs=1e-12)

    def test_empty_raises(self):
        mesh, _ = cube()
        with pytest.raises(GeometryError):
            surface_error_stats(np.zeros((0, 3)), mesh)


class TestEdgeStats:
    def test_on_edges_zero(self):
        _, edges = cube()
        st = edge_error_stats(edges.reshape(-1, 3), edges)
        assert st.mean == pytest.approx(0.0, abs=1e-12)

    def test_single_offset(self):
        _, edges = cube()
        p = edges[0, 0] + 0.25 * np.array([0.0, 0.6, -0.8])  # unit normal offset?
        # use a point whose nearest feature is a known edge midpoint instead
        seg = edges[0]
        mid = seg.mean(axis=0)
        axis = seg[1] - seg[0]
        perp = np.array([axis[1], -axis[0], 0.0])
        if np.linalg.norm(perp) == 0:
            perp = np.array([0.0, axis[2], -axis[1]])
        perp /= np.linalg.norm(perp)
        st = edge_error_stats((mid + 0.05 * perp)[None, :], edges)
        assert st.mean <= 0.05 + 1e-9


class TestHistogram:
    def test_all_zero_in_first_bin(self):
        counts, edges = distance_histogram(np.zeros(10), bin_count=5, value_range=(0, 1))
        assert counts[0] == 10 and counts[1:].sum() == 0

    def test_total_count(self):
        rng = np.random.default_rng(3)
        d = rng.uniform(0, 2, 1000)     # half out of range
        counts, _ = distance_histogram(d, bin_count=10, value_range=(0, 1))
        assert counts.sum() == 1000

    def test_overflow_clamped_to_last_bin(self):
        counts, _ = distance_histogram([5.0, 7.0], bin_count=4, value_range=(0, 1))
        assert counts[-1] == 2

    def test_uniform_matches_direct_tally(self):
        rng = np.random.default_rng(4)
        d = rng.uniform(0, 1, 5000)
        counts, edges = distance_histogram(d, bin_count=10, value_range=(0, 1))
        direct = [np.sum((d >= edges[i]) & (d < edges[i + 1])) for i in range(9)]
        direct.append(np.sum(d >= edges[9]))
        assert np.array_equal(counts, direct)
        assert counts.min() > 400    # roughly uniform


class TestReportWriters:
    def test_stats_and_histogram_csv(self, tmp_path):
        from sharpcloud.metrics import surface_error_stats
        from sharpcloud.report import write_histogram_csv, write_stats_csv
        mesh, edges = cube()
        rng = np.random.default_rng(5)
        pts = rng.uniform(-1.2, 1.2, (50, 3))
        st = surface_error_stats(pts, mesh)
        est = edge_error_stats(pts, edges)
        path = tmp_path / "stats.csv"
        write_stats_csv(path, [("cube", "input", 50, st, est)])
        text = path.read_text().splitlines()
        assert text[0].startswith("label,stage,n_points,surface_mean")
        assert text[1].startswith("cube,input,50,")

        counts, bin_edges = distance_histogram(rng.uniform(0, 0.05, 200))
        hpath = tmp_path / "hist.csv"
        write_histogram_csv(hpath, [("cube", "surface", counts, bin_edges)])
        lines = hpath.read_text().splitlines()
        assert len(lines) == 1 + len(counts)

    def test_figures_written_and_deterministic(self, tmp_path):
        from sharpcloud.losses import LossBreakdown
        from sharpcloud.report import save_histogram_figure, save_loss_curve
        history = [LossBreakdown(1.0 / (i + 1), 0.1, 0.01, 0.2, 1.2 / (i + 1), 3)
                   for i in range(10)]
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        save_loss_curve(p1, history)
        save_loss_curve(p2, history)
        assert p1.read_bytes() == p2.read_bytes()
        assert len(p1.read_bytes()) > 1000

        counts, edges = distance_histogram(np.linspace(0, 0.05, 100))
        hp = tmp_path / "h.png"
        save_histogram_figure(hp, [("input", counts, edges)])
        assert hp.exists()
