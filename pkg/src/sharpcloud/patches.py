"""Patch extraction: k-nn graph, Dijkstra-based geodesic-ish neighborhoods,
patch normalization, and ground-truth association for training.

Shortest-path patches keep points on the same sheet of the surface
together; a Euclidean ball would happily mix the two sides of a thin plate.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, TriMesh, closest_on_segments, closest_on_triangles

log = logging.getLogger(__name__)


class PatchError(ValueError):
    """Raised when a patch cannot be extracted or associated."""


@dataclass
class KnnGraph:
    """Exact k-nearest-neighbor graph with Euclidean edge weights."""

    neighbors: np.ndarray   # (n, k) int indices
    weights: np.ndarray     # (n, k) float distances
    k: int

    def __len__(self):
        return len(self.neighbors)

    def __post_init__(self):
        self._csr = None

    def symmetrized_csr(self):
        if self._csr is None:
            self._csr = _symmetrized_csr(self)
        return self._csr


@dataclass
class PatchTransform:
    """Normalized -> world map: world = points * scale + translation."""

    translation: np.ndarray
    scale: float

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) * self.scale + self.translation

    def invert(self, points):
        return (np.asarray(points, dtype=np.float64) - self.translation) / self.scale


@dataclass
class Patch:
    points: np.ndarray              # (n, 3), zero-mean unit ball
    centroid_index: int
    transform: PatchTransform
    source_indices: np.ndarray      # (n,) indices into the source cloud
    gt_triangles: np.ndarray | None = None   # (m, 3, 3) in the normalized frame
    gt_segments: np.ndarray | None = None    # (s, 2, 3) in the normalized frame


def build_knn_graph(cloud: PointCloud, k: int = 10) -> KnnGraph:
    """Exact k-nn under Euclidean distance, ties broken by lower index."""
    pts = cloud.points
    n = len(pts)
    if n < 2:
        raise PatchError(f"cloud too small for a k-nn graph: {n} points")
    k = min(k, n - 1)
    tree = cKDTree(pts)
    # query extra candidates so equal-distance ties at the k boundary can be
    # re-ordered deterministically by index
    m = min(n, k + 9)
    dist, idx = tree.query(pts, k=m)
    self_mask = idx == np.arange(n)[:, None]
    dist = np.where(self_mask, np.inf, dist)
    order = np.lexsort((idx, dist), axis=-1)    # per row: by distance, then index
    rows = np.arange(n)[:, None]
    neighbors = idx[rows, order[:, :k]]
    weights = dist[rows, order[:, :k]]
    return KnnGraph(neighbors.astype(np.int64), weights, k)


def _symmetrized_csr(graph: KnnGraph):
    """Union of directed k-nn edges, stored both ways for traversal."""
    n = len(graph)
    src = np.repeat(np.arange(n), graph.k)
    dst = graph.neighbors.ravel()
    w = graph.weights.ravel()
    heads = np.concatenate([src, dst])
    tails = np.concatenate([dst, src])
    ww = np.concatenate([w, w])
    order = np.argsort(heads, kind="stable")
    heads, tails, ww = heads[order], tails[order], ww[order]
    starts = np.searchsorted(heads, np.arange(n + 1))
    return starts, tails, ww


def dijkstra_nearest(graph: KnnGraph, source: int, count: int) -> np.ndarray:
    """Indices of the `count` nearest reachable points by shortest-path
    distance over the symmetrized graph, in settle order (source first).
    Ties settle lower index first."""
    starts, tails, ww = graph.symmetrized_csr()
    n = len(graph)
    best = np.full(n, np.inf)
    best[source] = 0.0
    settled = np.zeros(n, dtype=bool)
    out = []
    heap = [(0.0, source)]
    while heap and len(out) < count:
        d, u = heapq.heappop(heap)
        if settled[u]:
            continue
        settled[u] = True
        out.append(u)
        for e in range(starts[u], starts[u + 1]):
            v = tails[e]
            nd = d + ww[e]
            if nd < best[v]:
                best[v] = nd
                heapq.heappush(heap, (nd, v))
    return np.asarray(out, dtype=np.int64)


def normalize_patch(points):
    """Zero-mean, unit-ball normalization; returns (points, transform)."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        raise PatchError("cannot normalize an empty patch")
    centroid = points.mean(axis=0)
    centered = points - centroid
    scale = float(np.max(np.linalg.norm(centered, axis=1)))
    if scale == 0.0:
        log.warning("degenerate patch: all points identical, scale kept at 1")
        scale = 1.0
    return centered / scale, PatchTransform(translation=centroid, scale=scale)


def extract_patch(cloud: PointCloud, graph: KnnGraph, centroid: int,
                  dijkstra_size: int = 2048, sample_size: int = 1024,
                  rng: np.random.Generator | None = None) -> Patch:
    """Collect the dijkstra_size shortest-path-nearest points around the
    centroid, keep a uniform random sample_size subset, and normalize it."""
    if len(cloud) < dijkstra_size:
        raise PatchError(f"cloud has {len(cloud)} points, need {dijkstra_size}")
    reach = dijkstra_nearest(graph, centroid, dijkstra_size)
    if len(reach) < dijkstra_size:
        raise PatchError(
            f"patch underfilled: only {len(reach)} of {dijkstra_size} points "
            f"reachable from centroid {centroid}")
    if sample_size < dijkstra_size:
        rng = rng or np.random.default_rng()
        keep = np.sort(rng.choice(dijkstra_size, size=sample_size, replace=False))
        chosen = reach[keep]
    else:
        chosen = reach
    normalized, transform = normalize_patch(cloud.points[chosen])
    return Patch(points=normalized, centroid_index=centroid,
                 transform=transform, source_indices=chosen)


def _clip_segment_to_sphere(seg, radius):
    """Portion of the segment inside the origin-centered sphere, or None."""
    p0, p1 = seg
    d = p1 - p0
    a = float(d @ d)
    if a == 0.0:
        return seg.copy() if float(p0 @ p0) <= radius * radius else None
    b = 2.0 * float(p0 @ d)
    c = float(p0 @ p0) - radius * radius
    disc = b * b - 4 * a * c
    if disc < 0.0:
        return None
    sq = np.sqrt(disc)
    t0 = max((-b - sq) / (2 * a), 0.0)
    t1 = min((-b + sq) / (2 * a), 1.0)
    if t0 >= t1:
        return None
    return np.stack([p0 + t0 * d, p0 + t1 * d])


def associate_ground_truth(patch: Patch, mesh: TriMesh, edges, margin: float = 0.1) -> Patch:
    """Attach the mesh triangles and edge segments near the patch, mapped
    into the patch's normalized frame.

    margin is expressed in normalized-patch units; segments are clipped to
    the sphere of radius 1 + margin.
    """
    world_pts = patch.transform.apply(patch.points)
    world_margin = margin * patch.transform.scale

    tris = mesh.triangles
    sq, _ = closest_on_triangles(world_pts, tris)
    near_tris = np.sqrt(sq.min(axis=0)) <= world_margin
    if not near_tris.any():
        raise PatchError("patch has no associated triangles within the margin")
    gt_tris = tris[near_tris]
    flat = patch.transform.invert(gt_tris.reshape(-1, 3)).reshape(-1, 3, 3)
    patch.gt_triangles = flat

    edges = np.asarray(edges, dtype=np.float64).reshape(-1, 2, 3)
    gt_segs = []
    if len(edges) > 0:
        sq_e, _ = closest_on_segments(world_pts, edges)
        near_segs = np.sqrt(sq_e.min(axis=0)) <= world_margin
        for seg in edges[near_segs]:
            local = patch.transform.invert(seg)
            clipped = _clip_segment_to_sphere(local, 1.0 + margin)
            if clipped is not None:
                gt_segs.append(clipped)
    patch.gt_segments = (np.stack(gt_segs) if gt_segs else np.zeros((0, 2, 3)))
    return patch


def select_training_centroids(cloud: PointCloud, m: int = 100,
                              rng: np.random.Generator | None = None) -> np.ndarray:
    """m distinct uniform-random patch centroid indices."""
    if len(cloud) < m:
        raise PatchError(f"cloud has {len(cloud)} points, need {m} centroids")
    rng = rng or np.random.default_rng()
    return rng.choice(len(cloud), size=m, replace=False)


def farthest_point_sample(points, count: int, first: int) -> np.ndarray:
    """Greedy farthest-point sampling starting from `first`; each next pick
    maximizes the minimum distance to the chosen set, ties to lower index."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    count = min(count, n)
    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = first
    # squared distances give the same argmax ordering without the sqrt
    diff = points - points[first]
    dist = np.einsum("ij,ij->i", diff, diff)
    for i in range(1, count):
        nxt = int(np.argmax(dist))      # argmax returns the first (lowest) index on ties
        chosen[i] = nxt
        diff = points - points[nxt]
        np.minimum(dist, np.einsum("ij,ij->i", diff, diff), out=dist)
    return chosen


def select_inference_centroids(cloud: PointCloud, patch_size: int = 512,
                               coverage: float = 3.0,
                               rng: np.random.Generator | None = None) -> np.ndarray:
    """Farthest-point-sampled centroids so that each cloud point lands in
    roughly `coverage` patches: M = ceil(coverage * n / patch_size)."""
    n = len(cloud)
    if n == 0:
        raise PatchError("empty cloud")
    m = int(np.ceil(coverage * n / patch_size))
    if m >= n:
        return np.arange(n, dtype=np.int64)
    rng = rng or np.random.default_rng()
    first = int(rng.integers(0, n))
    return farthest_point_sample(cloud.points, m, first)
