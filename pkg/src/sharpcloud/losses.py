"""The edge-aware joint objective and its four terms.

Every term enters the autodiff graph as a custom node whose backward rule
is the analytic gradient of the underlying distance kernel; discrete
structure (which triangle/segment is closest, which points count as edge
points, which neighbors repel) is recomputed each forward pass and held
constant in backward.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .geometry import GeometryError, closest_on_segments, closest_on_triangles, mesh_closest_points, edges_closest_points


@dataclass
class LossConfig:
    alpha: float = 0.1          # edge-loss weight
    beta_regr: float = 0.01     # regression-loss weight
    h: float = 0.03             # repulsion radius
    repulsion_k: int = 4
    b: float = 0.5              # regression clamp bound
    delta_d: float = 0.15       # edge-point threshold (training default)


@dataclass
class LossBreakdown:
    surface: float
    edge: float
    repulsion: float
    regression: float
    joint: float
    edge_point_count: int


def surface_loss(points: ad.Tensor, triangles) -> ad.Tensor:
    """Mean squared distance from each point to the nearest triangle."""
    triangles = np.asarray(triangles, dtype=np.float64).reshape(-1, 3, 3)
    if len(triangles) == 0:
        raise GeometryError("surface loss needs a non-empty triangle set")
    pts = points.data
    n = len(pts)
    dist, _, closest = mesh_closest_points(pts, triangles)
    value = np.asarray(np.mean(dist ** 2))
    diff = pts - closest

    def rule(g):
        return (float(g) * (2.0 / n) * diff,)

    return ad.custom([points], value, rule)


def edge_loss(points: ad.Tensor, regressed_d: ad.Tensor, segments,
              delta_d: float) -> ad.Tensor:
    """Mean squared distance to the nearest edge segment, over the points
    whose regressed distance falls below delta_d.

    The selection is constant in backward: gradients flow only through the
    coordinates of the selected points, never into regressed_d.  Empty
    selection or empty segment set gives loss 0.
    """
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 3)
    mask = regressed_d.data.reshape(-1) < delta_d
    if len(segments) == 0 or not mask.any():
        return ad.custom([points, regressed_d], np.asarray(0.0), lambda g: (None, None))
    idx = np.nonzero(mask)[0]
    pts = points.data[idx]
    dist, _, closest = edges_closest_points(pts, segments)
    value = np.asarray(np.mean(dist ** 2))
    diff = pts - closest

    def rule(g):
        gp = np.zeros_like(points.data)
        gp[idx] = float(g) * (2.0 / len(idx)) * diff
        return (gp, None)

    return ad.custom([points, regressed_d], value, rule)


def repulsion_loss(points: ad.Tensor, k: int = 4, h: float = 0.03) -> ad.Tensor:
    """Penalty on point pairs closer than h, averaged over each point's
    k-nearest neighbors: mean of max(0, h^2 - r^2).

    Neighbor sets are recomputed each forward pass and held constant in
    backward; both endpoints of an active pair receive gradient.
    """
    pts = points.data
    n = len(pts)
    if n < k + 1:
        raise ValueError(f"repulsion loss needs at least {k + 1} points, got {n}")
    _, idx = cKDTree(pts).query(pts, k=k + 1)
    idx = idx[:, 1:]                                     # drop self
    diff = pts[idx] - pts[:, None, :]                    # (n, k, 3)
    r2 = np.einsum("nkd,nkd->nk", diff, diff)
    active = r2 < h * h
    value = np.asarray(np.sum(np.maximum(0.0, h * h - r2)) / (n * k))

    def rule(g):
        scale = float(g) / (n * k)
        contrib = np.where(active[:, :, None], 2.0 * diff, 0.0)   # d/dx_i of (h^2 - r^2)
        gp = scale * contrib.sum(axis=1)
        np.add.at(gp, idx.ravel(), -scale * contrib.reshape(-1, 3))
        return (gp,)

    return ad.custom([points], value, rule)


def _clamp(x, b):
    return np.clip(x, 0.0, b)


def regression_loss(points: ad.Tensor, regressed_d: ad.Tensor, segments,
                    b: float = 0.5) -> ad.Tensor:
    """Truncated regression loss: mean of [clamp(d_E) - clamp(d_i)]^2 with
    clamp(x) = min(max(x, 0), b).

    With no annotated segments the clamped target is b: points in a smooth
    patch are treated as at least b away from any edge.  Gradient reaches
    regressed_d (zero where clamped) and the point coordinates through d_E.
    """
    segments = np.asarray(segments, dtype=np.float64).reshape(-1, 2, 3)
    pts = points.data
    d_i = regressed_d.data.reshape(-1)
    n = len(pts)
    if len(segments) == 0:
        target = np.full(n, b)
        diff_dir = None
        d_true = None
    else:
        d_true, _, closest = edges_closest_points(pts, segments)
        target = _clamp(d_true, b)
        safe = np.where(d_true > 0.0, d_true, 1.0)[:, None]
        diff_dir = np.where(d_true[:, None] > 0.0, (pts - closest) / safe, 0.0)
    pred = _clamp(d_i, b)
    resid = target - pred
    value = np.asarray(np.mean(resid ** 2))

    pred_active = (d_i > 0.0) & (d_i < b)                # clamp derivative for d_i
    if d_true is not None:
        target_active = (d_true > 0.0) & (d_true < b)

    def rule(g):
        scale = float(g) * 2.0 / n
        gd = np.where(pred_active, -scale * resid, 0.0).reshape(regressed_d.data.shape)
        if diff_dir is None:
            return (None, gd)
        gp = (scale * resid * target_active)[:, None] * diff_dir
        return (gp, gd)

    return ad.custom([points, regressed_d], value, rule)


def joint_loss(points: ad.Tensor, regressed_d: ad.Tensor, triangles, segments,
               cfg: LossConfig = LossConfig()):
    """Weighted sum of all four terms; returns (breakdown, joint tensor)."""
    l_surf = surface_loss(points, triangles)
    l_edge = edge_loss(points, regressed_d, segments, cfg.delta_d)
    l_repl = repulsion_loss(points, k=cfg.repulsion_k, h=cfg.h)
    l_regr = regression_loss(points, regressed_d, segments, b=cfg.b)
    joint = ad.add(ad.add(l_surf, l_repl),
                   ad.add(ad.mul(l_edge, cfg.alpha), ad.mul(l_regr, cfg.beta_regr)))
    breakdown = LossBreakdown(
        surface=float(l_surf.data),
        edge=float(l_edge.data),
        repulsion=float(l_repl.data),
        regression=float(l_regr.data),
        joint=float(joint.data),
        edge_point_count=int(np.sum(regressed_d.data.reshape(-1) < cfg.delta_d)),
    )
    return breakdown, joint
