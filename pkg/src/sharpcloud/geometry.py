"""Exact point-to-triangle and point-to-segment distance kernels.

Points are plain float64 numpy arrays of shape (3,); point sets are (n, 3).
Triangles are (3, 3) arrays (one vertex per row) and triangle sets (m, 3, 3);
segments are (2, 3) and segment sets (m, 2, 3).

Scalar queries classify the closest-point region (face / edge / vertex for
triangles, interior / endpoint for segments).  Batch queries skip region
bookkeeping and are the kernels the losses and metrics run on.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    """Raised for empty or otherwise unusable geometric input."""


class TriangleRegion(enum.Enum):
    FACE = "face"
    EDGE_AB = "edge_ab"
    EDGE_BC = "edge_bc"
    EDGE_CA = "edge_ca"
    VERTEX_A = "vertex_a"
    VERTEX_B = "vertex_b"
    VERTEX_C = "vertex_c"


class SegmentRegion(enum.Enum):
    INTERIOR = "interior"
    END_P0 = "end_p0"
    END_P1 = "end_p1"


@dataclass
class ClosestPointResult:
    distance: float
    closest: np.ndarray
    region: TriangleRegion | SegmentRegion

    @property
    def sq_distance(self) -> float:
        return self.distance * self.distance


@dataclass
class TriMesh:
    """Triangle mesh: vertices (v, 3) float64 and triangles (f, 3) int indices."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def triangles(self) -> np.ndarray:
        """Per-face vertex coordinates, shape (f, 3, 3)."""
        return self.vertices[self.faces]

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.vertices) == 0:
            raise GeometryError("empty mesh has no bounding box")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass
class PointCloud:
    """Unordered 3D samples with optional per-point edge attributes."""

    points: np.ndarray
    edge_dist: np.ndarray | None = None
    is_edge: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.edge_dist is not None:
            self.edge_dist = np.asarray(self.edge_dist, dtype=np.float64).reshape(-1)
        if self.is_edge is not None:
            self.is_edge = np.asarray(self.is_edge).astype(bool).reshape(-1)

    def __len__(self) -> int:
        return len(self.points)


def point_segment_distance(p, seg) -> ClosestPointResult:
    """Minimum distance from p to the closed segment, with region classification."""
    p = np.asarray(p, dtype=np.float64)
    seg = np.asarray(seg, dtype=np.float64)
    p0, p1 = seg[0], seg[1]
    d = p1 - p0
    dd = float(d @ d)
    if dd == 0.0:
        closest = p0.copy()
        region = SegmentRegion.END_P0
    else:
        t = float((p - p0) @ d) / dd
        if t <= 0.0:
            closest, region = p0.copy(), SegmentRegion.END_P0
        elif t >= 1.0:
            closest, region = p1.copy(), SegmentRegion.END_P1
        else:
            closest, region = p0 + t * d, SegmentRegion.INTERIOR
    return ClosestPointResult(float(np.linalg.norm(p - closest)), closest, region)


# Maps the closest-point region of triangle edge i (as a segment) back to the
# triangle's own region labels.
_EDGE_REGIONS = (
    (TriangleRegion.EDGE_AB, TriangleRegion.VERTEX_A, TriangleRegion.VERTEX_B),
    (TriangleRegion.EDGE_BC, TriangleRegion.VERTEX_B, TriangleRegion.VERTEX_C),
    (TriangleRegion.EDGE_CA, TriangleRegion.VERTEX_C, TriangleRegion.VERTEX_A),
)


def _degenerate_triangle_distance(p, tri) -> ClosestPointResult:
    # Zero-area triangle: minimum over the three boundary segments.
    best = None
    best_region = None
    for i, (s, e) in enumerate(((0, 1), (1, 2), (2, 0))):
        r = point_segment_distance(p, tri[[s, e]])
        if best is None or r.distance < best.distance:
            best = r
            names = _EDGE_REGIONS[i]
            if r.region is SegmentRegion.INTERIOR:
                best_region = names[0]
            elif r.region is SegmentRegion.END_P0:
                best_region = names[1]
            else:
                best_region = names[2]
    return ClosestPointResult(best.distance, best.closest, best_region)


def point_triangle_distance(p, tri) -> ClosestPointResult:
    """Minimum distance from p to the closed triangle.

    Classifies which of the seven features (face, three edges, three
    vertices) realizes the minimum.  Degenerate triangles fall back to the
    minimum over their boundary segments.
    """
    p = np.asarray(p, dtype=np.float64)
    tri = np.asarray(tri, dtype=np.float64)
    a, b, c = tri[0], tri[1], tri[2]
    ab = b - a
    ac = c - a

    n = np.cross(ab, ac)
    if float(n @ n) == 0.0:
        return _degenerate_triangle_distance(p, tri)

    ap = p - a
    d1 = float(ab @ ap)
    d2 = float(ac @ ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return _result(p, a, TriangleRegion.VERTEX_A)

    bp = p - b
    d3 = float(ab @ bp)
    d4 = float(ac @ bp)
    if d3 >= 0.0 and d4 <= d3:
        return _result(p, b, TriangleRegion.VERTEX_B)

    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return _result(p, a + v * ab, TriangleRegion.EDGE_AB)

    cp = p - c
    d5 = float(ab @ cp)
    d6 = float(ac @ cp)
    if d6 >= 0.0 and d5 <= d6:
        return _result(p, c, TriangleRegion.VERTEX_C)

    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return _result(p, a + w * ac, TriangleRegion.EDGE_CA)

    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return _result(p, b + w * (c - b), TriangleRegion.EDGE_BC)

    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return _result(p, a + v * ab + w * ac, TriangleRegion.FACE)


def _result(p, closest, region) -> ClosestPointResult:
    return ClosestPointResult(float(np.linalg.norm(p - closest)), np.asarray(closest), region)


def closest_on_segments(points, segments):
    """Closest points on every segment for every query point.

    points: (n, 3); segments: (m, 2, 3).
    Returns (sq_dist (n, m), closest (n, m, 3)).  Zero-length segments
    degrade to point distance.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 3)
    p0 = segments[:, 0]                       # (m, 3)
    d = segments[:, 1] - segments[:, 0]       # (m, 3)
    dd = np.einsum("md,md->m", d, d)          # (m,)
    rel = points[:, None, :] - p0[None, :, :]  # (n, m, 3)
    t = np.einsum("nmd,md->nm", rel, d)
    np.divide(t, dd[None, :], out=t, where=dd[None, :] > 0.0)
    t[:, dd == 0.0] = 0.0
    np.clip(t, 0.0, 1.0, out=t)
    closest = p0[None, :, :] + t[:, :, None] * d[None, :, :]
    diff = points[:, None, :] - closest
    return np.einsum("nmd,nmd->nm", diff, diff), closest


def closest_on_triangles(points, triangles):
    """Closest points on every triangle for every query point (vectorized).

    points: (n, 3); triangles: (m, 3, 3).
    Returns (sq_dist (n, m), closest (n, m, 3)).  Degenerate triangles are
    handled by the segment fallback.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    n, m = len(points), len(triangles)
    a = triangles[:, 0]
    ab = triangles[:, 1] - a
    ac = triangles[:, 2] - a

    cross = np.cross(ab, ac)
    degenerate = np.einsum("md,md->m", cross, cross) == 0.0

    ap = points[:, None, :] - a[None, :, :]            # (n, m, 3)
    d1 = np.einsum("md,nmd->nm", ab, ap)
    d2 = np.einsum("md,nmd->nm", ac, ap)
    bp = ap - ab[None, :, :]
    d3 = np.einsum("md,nmd->nm", ab, bp)
    d4 = np.einsum("md,nmd->nm", ac, bp)
    cp = ap - ac[None, :, :]
    d5 = np.einsum("md,nmd->nm", ab, cp)
    d6 = np.einsum("md,nmd->nm", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    # Barycentric coefficients (u, v) of the closest point a + u*ab + v*ac,
    # chosen per region with the same branch predicates as the scalar kernel.
    u = np.zeros((n, m))
    v = np.zeros((n, m))
    decided = np.zeros((n, m), dtype=bool)

    def settle(mask, uu, vv):
        take = mask & ~decided
        u[take] = np.broadcast_to(uu, (n, m))[take]
        v[take] = np.broadcast_to(vv, (n, m))[take]
        decided[take] = True

    settle((d1 <= 0.0) & (d2 <= 0.0), 0.0, 0.0)                      # vertex a
    settle((d3 >= 0.0) & (d4 <= d3), 1.0, 0.0)                       # vertex b
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = np.where(d1 != d3, d1 / (d1 - d3), 0.0)
        settle((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0), t_ab, 0.0)   # edge ab
        settle((d6 >= 0.0) & (d5 <= d6), 0.0, 1.0)                   # vertex c
        t_ca = np.where(d2 != d6, d2 / (d2 - d6), 0.0)
        settle((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0), 0.0, t_ca)   # edge ca
        den_bc = (d4 - d3) + (d5 - d6)
        t_bc = np.where(den_bc != 0.0, (d4 - d3) / den_bc, 0.0)
        settle((va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0),
               1.0 - t_bc, t_bc)                                     # edge bc
        denom = va + vb + vc
        safe = np.where(denom != 0.0, denom, 1.0)
        settle(np.ones((n, m), dtype=bool), vb / safe, vc / safe)    # face

    closest = (a[None, :, :]
               + u[:, :, None] * ab[None, :, :]
               + v[:, :, None] * ac[None, :, :])

    if degenerate.any():
        idx = np.nonzero(degenerate)[0]
        for j in idx:
            tri = triangles[j]
            edges = tri[[(0, 1), (1, 2), (2, 0)]]          # (3, 2, 3)
            sq, cl = closest_on_segments(points, edges)
            k = np.argmin(sq, axis=1)
            closest[:, j] = cl[np.arange(n), k]

    diff = points[:, None, :] - closest
    return np.einsum("nmd,nmd->nm", diff, diff), closest


# Triangle-count chunk size for the mesh reductions; bounds the (n, chunk, 3)
# temporaries.
_CHUNK = 256


def _reduce_closest(points, prims, kernel):
    n = len(points)
    best_sq = np.full(n, np.inf)
    best_idx = np.zeros(n, dtype=np.int64)
    best_closest = np.zeros((n, 3))
    for start in range(0, len(prims), _CHUNK):
        chunk = prims[start:start + _CHUNK]
        sq, closest = kernel(points, chunk)
        j = np.argmin(sq, axis=1)
        sq_min = sq[np.arange(n), j]
        better = sq_min < best_sq
        best_sq[better] = sq_min[better]
        best_idx[better] = j[better] + start
        best_closest[better] = closest[np.arange(n), j][better]
    return best_sq, best_idx, best_closest


def mesh_closest_points(points, triangles):
    """For each point: (distance, index of minimizing triangle, closest point).

    Ties break to the lowest triangle index.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    triangles = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    if len(triangles) == 0:
        raise GeometryError("no ground-truth surface: empty triangle set")
    sq, idx, closest = _reduce_closest(points, triangles, closest_on_triangles)
    return np.sqrt(sq), idx, closest


def edges_closest_points(points, segments):
    """For each point: (distance, index of minimizing segment, closest point)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 3)
    if len(segments) == 0:
        raise GeometryError("no annotated edges: empty segment set")
    sq, idx, closest = _reduce_closest(points, segments, closest_on_segments)
    return np.sqrt(sq), idx, closest


def dist_to_mesh(p, triangles) -> tuple[float, int]:
    """Minimum distance from a single point to a triangle set."""
    d, idx, _ = mesh_closest_points(np.asarray(p, dtype=np.float64)[None, :], triangles)
    return float(d[0]), int(idx[0])


def dist_to_edges(p, segments) -> tuple[float, int]:
    """Minimum distance from a single point to a segment set."""
    d, idx, _ = edges_closest_points(np.asarray(p, dtype=np.float64)[None, :], segments)
    return float(d[0]), int(idx[0])


def grad_sq_dist_to_mesh(p, triangles) -> np.ndarray:
    """Gradient of squared mesh distance w.r.t. p: 2 (p - closest).

    The squared distance is C1 across region boundaries, so this single
    expression is correct everywhere, including distance 0 (zero vector).
    """
    p = np.asarray(p, dtype=np.float64)
    _, _, closest = mesh_closest_points(p[None, :], triangles)
    return 2.0 * (p - closest[0])


def grad_sq_dist_to_edges(p, segments) -> np.ndarray:
    """Gradient of squared edge-set distance w.r.t. p: 2 (p - closest)."""
    p = np.asarray(p, dtype=np.float64)
    _, _, closest = edges_closest_points(p[None, :], segments)
    return 2.0 * (p - closest[0])
