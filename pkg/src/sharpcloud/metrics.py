"""Quantitative evaluation: point-to-surface / point-to-edge error
statistics and distance histograms, plus the quantization-noise sweep."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import GeometryError, PointCloud, TriMesh, edges_closest_points, mesh_closest_points
from .pipeline import ConsolidateConfig, consolidate
from .scanner import ScanConfig, virtual_scan


@dataclass
class ErrorStats:
    mean: float
    rms: float
    count: int

    def __post_init__(self):
        # rms^2 >= mean^2 by Jensen; a violation means a broken reduction
        assert self.rms ** 2 >= self.mean ** 2 - 1e-12

    @property
    def mean_x1e3(self):
        return self.mean * 1e3

    @property
    def rms_x1e3(self):
        return self.rms * 1e3


def _stats(distances) -> ErrorStats:
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if d.size == 0:
        raise GeometryError("no distances to aggregate")
    return ErrorStats(mean=float(d.mean()), rms=float(np.sqrt(np.mean(d ** 2))),
                      count=int(d.size))


def surface_error_stats(points, mesh: TriMesh) -> ErrorStats:
    """Mean / RMS of minimum point-to-surface distance, in mesh units."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.size == 0:
        raise GeometryError("empty point set")
    d, _, _ = mesh_closest_points(points, mesh.triangles)
    return _stats(d)


def edge_error_stats(points, segments) -> ErrorStats:
    """Mean / RMS of minimum point-to-edge distance."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if points.size == 0:
        raise GeometryError("empty point set")
    d, _, _ = edges_closest_points(points, segments)
    return _stats(d)


def distance_histogram(distances, bin_count: int = 50, value_range=(0.0, 0.05)):
    """Counts per uniform bin; out-of-range values clamp into the end bins.

    Returns (counts (bin_count,), bin edges (bin_count + 1,)).
    """
    if bin_count < 1:
        raise ValueError("bin_count must be >= 1")
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    lo, hi = value_range
    edges = np.linspace(lo, hi, bin_count + 1)
    idx = np.floor((d - lo) / (hi - lo) * bin_count).astype(np.int64)
    idx = np.clip(idx, 0, bin_count - 1)
    counts = np.bincount(idx, minlength=bin_count)
    return counts, edges


@dataclass
class SweepRow:
    n_q: int
    stage: str            # "input" | "output"
    n_points: int
    surface: ErrorStats
    edge: ErrorStats
    surface_hist: np.ndarray
    edge_hist: np.ndarray
    hist_edges: np.ndarray


def noise_sweep_report(mesh: TriMesh, edges, params,
                       n_q_values=(120, 80, 50),
                       scan_cfg: ScanConfig = ScanConfig(),
                       consolidate_cfg: ConsolidateConfig = ConsolidateConfig(),
                       hist_bins: int = 50, hist_range=(0.0, 0.05)):
    """Scan the mesh at each quantization level, consolidate, and report
    before/after surface and edge error statistics with histograms."""
    from dataclasses import replace

    rows = []
    for n_q in n_q_values:
        cloud = virtual_scan(mesh, replace(scan_cfg, n_q=int(n_q)))
        out = consolidate(cloud, params, consolidate_cfg)
        for stage, pts in (("input", cloud.points), ("output", out.points)):
            d_surf, _, _ = mesh_closest_points(pts, mesh.triangles)
            d_edge, _, _ = edges_closest_points(pts, edges)
            sh, he = distance_histogram(d_surf, hist_bins, hist_range)
            eh, _ = distance_histogram(d_edge, hist_bins, hist_range)
            rows.append(SweepRow(n_q=int(n_q), stage=stage, n_points=len(pts),
                                 surface=_stats(d_surf), edge=_stats(d_edge),
                                 surface_hist=sh, edge_hist=eh, hist_edges=he))
    return rows
