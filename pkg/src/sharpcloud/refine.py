"""Post-network point-set cleanup.

Edge points are snapped onto RANSAC-fitted line segments; surface points
are regrouped by edge-stopping breadth-first growth over a k-nn graph and
projected onto per-group PCA planes; dart throwing then pulls original
points back in to bridge any gap the projections opened up.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud

log = logging.getLogger(__name__)


@dataclass
class RefineConfig:
    ransac_tol: float = 0.01
    ransac_min_inliers: int = 10
    ransac_iterations: int = 500
    knn_k: int = 10
    group_size: int = 30
    rounds: int = 3
    fill_min_dist: float = 0.03   # matches the repulsion radius h
    seed: int = 0


def ransac_fit_edges(edge_points, tol: float = 0.01, min_inliers: int = 10,
                     iterations: int = 500,
                     rng: np.random.Generator | None = None):
    """Iteratively extract line segments from the edge points.

    Each round fits the best 2-point line hypothesis over the remaining
    points, projects its inliers onto the line, and clips the segment to
    the inlier extent.  Points never claimed by a segment of at least
    min_inliers are dropped from the edge set.

    Returns (segments (s, 2, 3), projected points, their indices into
    edge_points, leftover indices).
    """
    edge_points = np.asarray(edge_points, dtype=np.float64).reshape(-1, 3)
    rng = rng or np.random.default_rng()
    remaining = np.arange(len(edge_points))
    segments, projected, projected_idx = [], [], []
    score_cap = 1000      # hypotheses are ranked on at most this many points
    while len(remaining) >= max(2, min_inliers):
        pts = edge_points[remaining]
        pair_a = rng.integers(0, len(pts), size=iterations)
        pair_b = rng.integers(0, len(pts), size=iterations)
        if len(pts) > score_cap:
            score_pts = pts[rng.choice(len(pts), size=score_cap, replace=False)]
        else:
            score_pts = pts
        # rank all 2-point hypotheses by inlier count on the scoring subset
        d = pts[pair_b] - pts[pair_a]                        # (i, 3)
        norms = np.linalg.norm(d, axis=1)
        ok = norms > 0.0
        d[ok] /= norms[ok, None]
        rel = score_pts[None, :, :] - pts[pair_a][:, None, :]   # (i, s, 3)
        along = np.einsum("isd,id->is", rel, d)
        perp2 = np.einsum("isd,isd->is", rel, rel) - along ** 2
        counts = np.where(ok, (perp2 < tol * tol).sum(axis=1), 0)
        k = int(np.argmax(counts))
        if not ok[k]:
            break
        # exact inliers of the winning hypothesis over all remaining points
        q0, direction = pts[pair_a[k]], d[k]
        rel = pts - q0
        along = rel @ direction
        perp2 = np.einsum("nd,nd->n", rel, rel) - along ** 2
        inliers = perp2 < tol * tol
        if int(inliers.sum()) < min_inliers:
            break
        t = along[inliers]
        proj = q0 + t[:, None] * direction[None, :]
        segments.append(np.stack([q0 + t.min() * direction, q0 + t.max() * direction]))
        projected.append(proj)
        projected_idx.append(remaining[inliers])
        remaining = remaining[~inliers]
    if segments:
        return (np.stack(segments), np.concatenate(projected),
                np.concatenate(projected_idx), remaining)
    return np.zeros((0, 2, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64), remaining


def pca_filter_surface(surface_points, edge_points, knn_k: int = 10,
                       group_size: int = 30):
    """Project surface points onto per-group PCA planes.

    Groups grow breadth-first over the k-nn graph of surface and edge
    points combined, but never expand through an edge point, so groups
    cannot leak across a crease.  Groups too small to define a plane are
    left untouched.
    """
    surface_points = np.asarray(surface_points, dtype=np.float64).reshape(-1, 3)
    edge_points = np.asarray(edge_points, dtype=np.float64).reshape(-1, 3)
    n_surf = len(surface_points)
    if n_surf == 0:
        return surface_points.copy()
    combined = np.vstack([surface_points, edge_points])
    k = min(knn_k + 1, len(combined))
    _, nbr = cKDTree(combined).query(combined, k=k)
    nbr = np.atleast_2d(nbr)

    out = surface_points.copy()
    visited = np.zeros(n_surf, dtype=bool)
    for seed in range(n_surf):
        if visited[seed]:
            continue
        group = [seed]
        visited[seed] = True
        queue = deque([seed])
        while queue and len(group) < group_size:
            u = queue.popleft()
            for v in nbr[u, 1:]:
                if v >= n_surf:
                    continue            # edge point: stop growth through it
                if not visited[v]:
                    visited[v] = True
                    group.append(int(v))
                    queue.append(int(v))
                    if len(group) >= group_size:
                        break
        if len(group) < 3:
            continue
        pts = surface_points[group]
        center = pts.mean(axis=0)
        _, _, vt = np.linalg.svd(pts - center, full_matrices=False)
        normal = vt[-1]                 # least-variance direction
        out[group] = pts - ((pts - center) @ normal)[:, None] * normal[None, :]
    return out


def fill_gaps(refined_points, original_points, min_dist: float = 0.03):
    """Dart-throwing re-insertion of original points into gaps.

    Original points farther than min_dist from every refined point are
    candidates (in index order); each is accepted only if it also keeps
    min_dist from all previously accepted points.
    """
    refined_points = np.asarray(refined_points, dtype=np.float64).reshape(-1, 3)
    original_points = np.asarray(original_points, dtype=np.float64).reshape(-1, 3)
    if len(original_points) == 0:
        return np.zeros((0, 3))
    if len(refined_points) == 0:
        candidates = original_points
    else:
        d, _ = cKDTree(refined_points).query(original_points)
        candidates = original_points[d > min_dist]
    accepted = np.empty((len(candidates), 3))
    count = 0
    for p in candidates:
        if count and np.min(np.einsum("ij,ij->i", accepted[:count] - p,
                                      accepted[:count] - p)) < min_dist ** 2:
            continue
        accepted[count] = p
        count += 1
    return accepted[:count].copy()


def refine(cloud: PointCloud, cfg: RefineConfig = RefineConfig()) -> PointCloud:
    """Iterate edge RANSAC + surface PCA filtering, then fill gaps once.

    Edge points that no fitted segment claims are demoted to surface points
    rather than deleted; projected edge points keep their flag through
    later rounds.
    """
    rng = np.random.default_rng(cfg.seed)
    points = cloud.points.copy()
    is_edge = (cloud.is_edge.copy() if cloud.is_edge is not None
               else np.zeros(len(points), dtype=bool))

    for _ in range(cfg.rounds):
        edge_pts = points[is_edge]
        surf_pts = points[~is_edge]
        _, projected, proj_idx, leftover = ransac_fit_edges(
            edge_pts, tol=cfg.ransac_tol, min_inliers=cfg.ransac_min_inliers,
            iterations=cfg.ransac_iterations, rng=rng)
        new_edge = projected
        demoted = edge_pts[leftover]
        surf_all = np.vstack([surf_pts, demoted])
        new_surf = pca_filter_surface(surf_all, new_edge,
                                      knn_k=cfg.knn_k, group_size=cfg.group_size)
        points = np.vstack([new_edge, new_surf])
        is_edge = np.concatenate([np.ones(len(new_edge), dtype=bool),
                                  np.zeros(len(new_surf), dtype=bool)])

    filled = fill_gaps(points, cloud.points, min_dist=cfg.fill_min_dist)
    points = np.vstack([points, filled])
    is_edge = np.concatenate([is_edge, np.zeros(len(filled), dtype=bool)])
    return PointCloud(points, is_edge=is_edge)
