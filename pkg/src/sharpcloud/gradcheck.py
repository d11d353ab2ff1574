"""Finite-difference verification of every analytic gradient path:
autodiff primitives, the four loss terms, the joint objective, and a
sampled subset of full-network parameters on a tiny patch.

The CLI `gradcheck` subcommand runs this suite and reports the worst
relative error; the test suite reuses the same checks.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .losses import LossConfig, edge_loss, joint_loss, regression_loss, repulsion_loss, surface_loss
from .network import Architecture, forward, init_params, _wrap_params

FD_STEP = 1e-5


def relative_error(analytic, numeric, floor=1e-6) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def _fd_grad(f, x, step=FD_STEP):
    flat = x.ravel()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * step)
    return grad.reshape(x.shape)


def _check_points_gradient(build, pts):
    def f(x):
        tape = ad.Tape()
        return float(build(tape, tape.tensor(x, requires_grad=True)).data)

    tape = ad.Tape()
    leaf = tape.tensor(pts, requires_grad=True)
    tape.backward(build(tape, leaf))
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(pts)
    return relative_error(analytic, _fd_grad(f, pts.copy()))


def _general_position(rng, cfg, spread=0.5):
    """Random fixture kept clear of case boundaries and threshold flips.

    A small spread packs the points tightly enough that repulsion pairs
    are active (non-zero term) instead of trivially zero.
    """
    from scipy.spatial import cKDTree
    from .geometry import closest_on_segments, closest_on_triangles

    while True:
        pts = rng.uniform(-spread, spread, size=(16, 3))
        tris = rng.uniform(-1, 1, size=(3, 3, 3))
        segs = rng.uniform(-1, 1, size=(2, 2, 3))
        d = rng.uniform(-0.1, 0.6, size=(16, 1))
        eps = 2e-4
        sq_t, _ = closest_on_triangles(pts, tris)
        srt = np.sort(np.sqrt(sq_t), axis=1)
        if np.min(srt[:, 1] - srt[:, 0]) < eps:
            continue
        sq_s, _ = closest_on_segments(pts, segs)
        srt = np.sort(np.sqrt(sq_s), axis=1)
        if np.min(srt[:, 1] - srt[:, 0]) < eps or np.min(srt[:, 0]) < eps:
            continue
        if np.min(np.abs(srt[:, 0] - cfg.b)) < eps:
            continue
        dd = d.reshape(-1)
        if min(np.min(np.abs(dd - cfg.delta_d)), np.min(np.abs(dd)),
               np.min(np.abs(dd - cfg.b))) < eps:
            continue
        knn, _ = cKDTree(pts).query(pts, k=cfg.repulsion_k + 2), None
        dist = knn[0]
        if np.min(dist[:, -1] - dist[:, -2]) < eps or np.min(np.abs(dist[:, 1:] - cfg.h)) < eps:
            continue
        return pts, tris, segs, d


def check_losses(seed=0, fixtures=20):
    """Worst relative FD error across the loss terms; dict of results.

    Fixtures alternate between a wide spread (repulsion inactive) and a
    tight cluster (repulsion pairs active) so every branch is exercised.
    """
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    worst = {"surface": 0.0, "edge": 0.0, "repulsion": 0.0, "regression": 0.0, "joint": 0.0}
    for k in range(fixtures):
        spread = 0.5 if k % 2 == 0 else 0.04
        pts, tris, segs, d = _general_position(rng, cfg, spread=spread)

        worst["surface"] = max(worst["surface"], _check_points_gradient(
            lambda tape, leaf: surface_loss(leaf, tris), pts))
        worst["edge"] = max(worst["edge"], _check_points_gradient(
            lambda tape, leaf: edge_loss(leaf, tape.tensor(d), segs, cfg.delta_d), pts))
        worst["repulsion"] = max(worst["repulsion"], _check_points_gradient(
            lambda tape, leaf: repulsion_loss(leaf, cfg.repulsion_k, cfg.h), pts))
        worst["regression"] = max(worst["regression"], _check_points_gradient(
            lambda tape, leaf: regression_loss(leaf, tape.tensor(d), segs, cfg.b), pts))
        worst["joint"] = max(worst["joint"], _check_points_gradient(
            lambda tape, leaf: joint_loss(leaf, tape.tensor(d), tris, segs, cfg)[1], pts))
    return worst


def check_primitives(seed=0):
    """FD agreement for the raw autodiff primitives on random inputs."""
    rng = np.random.default_rng(seed)
    results = {}

    def one(name, build, x0):
        results[name] = max(results.get(name, 0.0), _check_points_gradient(build, x0))

    for _ in range(5):
        w = rng.normal(size=(4, 6))
        b = rng.normal(size=6)
        x = rng.normal(size=(5, 4))
        if np.min(np.abs(x @ w + b)) < 1e-3:
            continue
        one("linear+relu", lambda tape, leaf: ad.reduce_mean(
            ad.relu(ad.linear(leaf, tape.constant(w), tape.constant(b)))), x)
        idx = rng.integers(0, 5, size=7)
        one("gather", lambda tape, leaf: ad.reduce_mean(ad.square(ad.gather(leaf, idx))), x)
        one("replicate", lambda tape, leaf: ad.reduce_mean(ad.square(ad.replicate(leaf, 3))), x)
        sizes = [2, 3]
        one("max_over_group", lambda tape, leaf: ad.reduce_mean(
            ad.max_over_group(leaf, sizes)), x)
        one("mean_over_group", lambda tape, leaf: ad.reduce_mean(
            ad.mean_over_group(leaf, sizes)), x)
        i3 = rng.integers(0, 5, size=(4, 3))
        w3 = rng.uniform(0.1, 1.0, size=(4, 3))
        one("gather_weighted_sum", lambda tape, leaf: ad.reduce_mean(
            ad.square(ad.gather_weighted_sum(leaf, i3, w3))), x)
    return results


def check_network_params(seed=0, n_samples=20, arch=Architecture(n_hat=64)):
    """FD check of the joint loss w.r.t. sampled network parameters.

    Biases are randomized away from the zero init: every ball query group
    contains its own center at relative coordinates (0, 0, 0), so with zero
    biases thousands of relu pre-activations would sit exactly on the kink
    and central differences would see one-sided slopes.
    """
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(arch.n_hat, 3))
    pts -= pts.mean(axis=0)
    pts /= np.max(np.linalg.norm(pts, axis=1))
    tris = rng.uniform(-1, 1, size=(3, 3, 3))
    segs = rng.uniform(-1, 1, size=(2, 2, 3))
    cfg = LossConfig()
    params = init_params(arch, seed=seed)
    for name, arr in params.arrays.items():
        if name.endswith("_b"):
            arr[:] = rng.uniform(-0.05, 0.05, size=arr.shape)

    def loss_value(p):
        tape = ad.Tape()
        out = forward(tape, pts, p)
        _, joint = joint_loss(out.points, out.distances, tris, segs, cfg)
        return float(joint.data)

    tape = ad.Tape()
    weights = _wrap_params(tape, params)
    out = forward(tape, pts, params, weights=weights)
    _, joint = joint_loss(out.points, out.distances, tris, segs, cfg)
    tape.backward(joint)

    names = sorted(params.arrays)
    worst = 0.0
    # smaller step than the loss checks: with tens of thousands of relu
    # pre-activations, a 1e-5 step occasionally crosses a kink somewhere
    step = 1e-6
    for k in range(n_samples):
        name = names[int(rng.integers(0, len(names)))]
        arr = params.arrays[name]
        i = int(rng.integers(0, arr.size))
        p2 = params.copy()
        p2.arrays[name].ravel()[i] += step
        hi = loss_value(p2)
        p2.arrays[name].ravel()[i] -= 2 * step
        lo = loss_value(p2)
        fd = (hi - lo) / (2 * step)
        grad = weights[name].grad
        an = grad.ravel()[i] if grad is not None else 0.0
        worst = max(worst, relative_error(np.array([an]), np.array([fd]), floor=1e-4))
    return worst


def run_suite(seed=0, loss_fixtures=20, param_samples=20):
    """Full gradcheck; returns (report dict, worst error overall)."""
    report = {}
    for name, err in check_primitives(seed).items():
        report[f"primitive/{name}"] = err
    for name, err in check_losses(seed, fixtures=loss_fixtures).items():
        report[f"loss/{name}"] = err
    report["network/params"] = check_network_params(seed, n_samples=param_samples)
    return report, max(report.values())
