"""Training loop with on-the-fly augmentation and Adam, plus patch-wise
inference that merges per-patch network outputs back into a full cloud.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from . import autodiff as ad
from .geometry import PointCloud
from .losses import LossBreakdown, LossConfig, joint_loss
from .network import Architecture, NetworkParams, forward, save_checkpoint, _wrap_params
from .patches import (
    Patch,
    PatchError,
    build_knn_graph,
    extract_patch,
    select_inference_centroids,
)

log = logging.getLogger(__name__)


@dataclass
class AugmentConfig:
    rotate: bool = True
    translate: bool = True
    scale: bool = True
    noise: bool = True
    shuffle: bool = True
    translate_range: float = 0.2
    scale_low: float = 0.8
    scale_high: float = 1.2
    noise_sigma_frac: float = 0.005    # of the bounding-box diagonal


@dataclass
class TrainConfig:
    epochs: int = 60               # desk-scale default; the full run uses 200
    batch_size: int = 12
    learning_rate: float = 0.001
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: NetworkParams, **kw):
        return cls(m={k: np.zeros_like(a) for k, a in params.arrays.items()},
                   v={k: np.zeros_like(a) for k, a in params.arrays.items()},
                   **kw)


def adam_step(params: NetworkParams, grads: dict, state: AdamState,
              lr: float) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update, in place on params and state."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        arr = params.arrays[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {arr.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def augment_patch(patch: Patch, rng: np.random.Generator,
                  cfg: AugmentConfig = AugmentConfig()) -> Patch:
    """Random rotation, translation, scale, point noise, and point shuffle,
    in that order.  The geometric transforms apply identically to the
    ground-truth triangles and segments; noise and shuffle touch only the
    points."""
    pts = patch.points.copy()
    tris = None if patch.gt_triangles is None else patch.gt_triangles.copy()
    segs = None if patch.gt_segments is None else patch.gt_segments.copy()
    src = patch.source_indices.copy()

    def apply_all(fn):
        nonlocal pts, tris, segs
        pts = fn(pts)
        if tris is not None and len(tris):
            tris = fn(tris.reshape(-1, 3)).reshape(-1, 3, 3)
        if segs is not None and len(segs):
            segs = fn(segs.reshape(-1, 3)).reshape(-1, 2, 3)

    if cfg.rotate:
        rot = Rotation.random(rng=rng).as_matrix()
        apply_all(lambda x: x @ rot.T)
    if cfg.translate:
        t = rng.uniform(-cfg.translate_range, cfg.translate_range, size=3)
        apply_all(lambda x: x + t)
    if cfg.scale:
        s = rng.uniform(cfg.scale_low, cfg.scale_high)
        apply_all(lambda x: x * s)
    if cfg.noise:
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        sigma = cfg.noise_sigma_frac * float(np.linalg.norm(hi - lo))
        pts = pts + rng.normal(0.0, sigma, size=pts.shape)
    if cfg.shuffle:
        perm = rng.permutation(len(pts))
        pts = pts[perm]
        src = src[perm]

    return Patch(points=pts, centroid_index=patch.centroid_index,
                 transform=patch.transform, source_indices=src,
                 gt_triangles=tris, gt_segments=segs)


def _patch_gradients(patch: Patch, params: NetworkParams, loss_cfg: LossConfig):
    """Forward + backward on one patch; returns (breakdown, grads by name)."""
    tape = ad.Tape()
    weights = _wrap_params(tape, params)
    out = forward(tape, patch.points, params, weights=weights)
    breakdown, joint = joint_loss(out.points, out.distances,
                                  patch.gt_triangles, patch.gt_segments, loss_cfg)
    tape.backward(joint)
    grads = {name: (w.grad if w.grad is not None else np.zeros_like(w.data))
             for name, w in weights.items()}
    return breakdown, grads


def train(dataset: list[Patch], params: NetworkParams,
          cfg: TrainConfig = TrainConfig(),
          checkpoint_dir=None,
          adam: AdamState | None = None):
    """Minibatch training over pre-extracted patches.

    Deterministic for a fixed seed (single worker).  Returns
    (params, history, adam) where history has one LossBreakdown per step.
    Checkpoints (with optimizer state) are written per epoch when
    checkpoint_dir is given.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    for p in dataset:
        if p.gt_triangles is None or len(p.gt_triangles) == 0:
            raise ValueError("every training patch needs associated gt triangles")
    if cfg.batch_size > len(dataset):
        raise ValueError(f"batch size {cfg.batch_size} exceeds dataset size {len(dataset)}")

    rng = np.random.default_rng(cfg.seed)
    adam = adam or AdamState.for_params(params, beta1=cfg.adam_beta1,
                                        beta2=cfg.adam_beta2, eps=cfg.adam_eps)
    history: list[LossBreakdown] = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc = None
            terms = np.zeros(5)
            edge_points = 0
            for i in batch:
                patch = augment_patch(dataset[i], rng, cfg.augment)
                breakdown, grads = _patch_gradients(patch, params, cfg.loss)
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] += grads[k]
                terms += (breakdown.surface, breakdown.edge, breakdown.repulsion,
                          breakdown.regression, breakdown.joint)
                edge_points += breakdown.edge_point_count
            for k in acc:
                acc[k] /= len(batch)
            params, adam = adam_step(params, acc, adam, cfg.learning_rate)
            terms /= len(batch)
            history.append(LossBreakdown(*terms, edge_point_count=edge_points // len(batch)))
        if checkpoint_dir is not None:
            path = f"{checkpoint_dir}/checkpoint_epoch{epoch + 1:04d}.npz"
            save_checkpoint(path, params,
                            extra={"epoch": epoch + 1, "adam_step": adam.step},
                            aux={**{f"m/{k}": v for k, v in adam.m.items()},
                                 **{f"v/{k}": v for k, v in adam.v.items()}})
        log.info("epoch %d/%d joint=%.6f", epoch + 1, cfg.epochs, history[-1].joint)

    return params, history, adam


def adam_from_aux(params: NetworkParams, aux: dict, step: int) -> AdamState:
    """Rebuild optimizer state from checkpoint aux arrays."""
    state = AdamState.for_params(params)
    state.step = step
    for k in params.arrays:
        if f"m/{k}" in aux:
            state.m[k] = aux[f"m/{k}"].copy()
        if f"v/{k}" in aux:
            state.v[k] = aux[f"v/{k}"].copy()
    return state


@dataclass
class ConsolidateConfig:
    knn_k: int = 10
    dijkstra_size: int = 2048
    coverage: float = 3.0
    delta_d_infer: float = 0.05
    seed: int = 0


def consolidate(cloud: PointCloud, params: NetworkParams,
                cfg: ConsolidateConfig = ConsolidateConfig()) -> PointCloud:
    """Patch-wise consolidation of a raw cloud.

    Extracts patches at farthest-point-sampled centroids, runs the network
    on each, and concatenates the denormalized outputs.  Edge flags apply
    the threshold in the normalized patch frame (where the network was
    trained); the stored edge_dist is rescaled to world units.
    """
    arch = params.arch
    rng = np.random.default_rng(cfg.seed)
    graph = build_knn_graph(cloud, k=cfg.knn_k)
    centroids = select_inference_centroids(cloud, patch_size=arch.n_retained,
                                           coverage=cfg.coverage, rng=rng)
    pts_out, dist_out, flag_out = [], [], []
    failures = 0
    for c in centroids:
        try:
            patch = extract_patch(cloud, graph, int(c),
                                  dijkstra_size=cfg.dijkstra_size,
                                  sample_size=arch.n_hat, rng=rng)
        except PatchError as exc:
            failures += 1
            log.warning("skipping centroid %d: %s", c, exc)
            continue
        tape = ad.Tape()
        weights = {k: tape.tensor(v) for k, v in params.arrays.items()}
        out = forward(tape, patch.points, params, weights=weights)
        d = out.distance_values.reshape(-1)
        pts_out.append(patch.transform.apply(out.point_values))
        dist_out.append(d * patch.transform.scale)
        flag_out.append(d < cfg.delta_d_infer)
    if not pts_out:
        raise PatchError(f"consolidation failed: all {failures} patches unusable")
    return PointCloud(np.concatenate(pts_out),
                      edge_dist=np.concatenate(dist_out),
                      is_edge=np.concatenate(flag_out))
