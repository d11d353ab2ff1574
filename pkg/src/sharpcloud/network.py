"""The consolidation model: multi-level point feature embedding, feature
expansion, edge-distance regression, and residual coordinate regression.

The embedding is a set-abstraction hierarchy (farthest-point subsampling +
ball-query grouping + shared MLP + max pool) whose per-level features are
interpolated back onto the retained points and concatenated.  Expansion
replicates each retained feature through r independently parameterized
projection branches, one output point per branch.

All grouping radii assume the zero-mean unit-ball patch normalization;
they are part of the architecture, not per-call knobs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.spatial import cKDTree

from . import autodiff as ad
from .patches import farthest_point_sample


@dataclass(frozen=True)
class Architecture:
    n_hat: int = 1024
    upsample_r: int = 4
    level_radii: tuple = (0.1, 0.2, 0.4, 0.6)
    level_widths: tuple = ((32, 32, 64), (32, 32, 64), (64, 64, 128), (64, 64, 128))
    restore_channels: int = 64
    expand_channels: tuple = (256, 128)
    dist_hidden: int = 64
    coord_hidden: int = 64
    group_cap: int = 32
    interp_k: int = 3

    @property
    def n_retained(self) -> int:
        return self.n_hat // 2

    @property
    def embed_dim(self) -> int:
        return len(self.level_radii) * self.restore_channels

    def level_counts(self):
        n = self.n_retained
        return tuple(max(1, n >> i) for i in range(len(self.level_radii)))

    def layer_shapes(self):
        """Name -> (fan_in, fan_out) for every linear layer."""
        shapes = {}
        prev_channels = 0
        for lvl, widths in enumerate(self.level_widths):
            fan_in = 3 + prev_channels
            for j, width in enumerate(widths):
                shapes[f"embed{lvl}_mlp{j}"] = (fan_in, width)
                fan_in = width
            shapes[f"restore{lvl}"] = (widths[-1], self.restore_channels)
            prev_channels = widths[-1]
        d, d1, d2 = self.embed_dim, *self.expand_channels
        for c in range(self.upsample_r):
            shapes[f"expand{c}_fc0"] = (d, d1)
            shapes[f"expand{c}_fc1"] = (d1, d2)
        shapes["dist_fc0"] = (d2, self.dist_hidden)
        shapes["dist_fc1"] = (self.dist_hidden, 1)
        shapes["coord_fc0"] = (d2 + self.dist_hidden, self.coord_hidden)
        shapes["coord_fc1"] = (self.coord_hidden, 3)
        return shapes

    def hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class NetworkParams:
    arch: Architecture
    arrays: dict
    seed: int

    def names(self):
        return sorted(self.arrays)

    def copy(self):
        return NetworkParams(self.arch, {k: v.copy() for k, v in self.arrays.items()}, self.seed)


def init_params(arch: Architecture = Architecture(), seed: int = 0) -> NetworkParams:
    """Fan-in-scaled uniform weights, zero biases, deterministic in seed."""
    rng = np.random.default_rng(seed)
    arrays = {}
    for name, (fan_in, fan_out) in arch.layer_shapes().items():
        limit = np.sqrt(6.0 / fan_in)
        arrays[name + "_w"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        arrays[name + "_b"] = np.zeros(fan_out)
    return NetworkParams(arch, arrays, seed)


@dataclass
class ForwardResult:
    points: ad.Tensor          # (rN, 3), normalized patch frame
    distances: ad.Tensor       # (rN,) regressed point-to-edge distances
    retained_indices: np.ndarray   # (N,) into the input patch
    source_point: np.ndarray       # (rN,) retained-input index per output

    @property
    def point_values(self):
        return self.points.data

    @property
    def distance_values(self):
        return self.distances.data


def identify_edge_points(distances, delta_d: float) -> np.ndarray:
    """Edge mask: regressed distance strictly below the threshold."""
    d = distances.data if isinstance(distances, ad.Tensor) else np.asarray(distances)
    return d.reshape(-1) < delta_d


def _ball_groups(centers, source, radius, cap, self_idx):
    """Nearest-first neighbor lists within `radius`, capped at `cap`.

    Returns (flat source indices, per-group sizes).  A center with an empty
    ball degrades to its own source point.
    """
    k = min(cap, len(source))
    tree = cKDTree(source)
    dist, idx = tree.query(centers, k=k, distance_upper_bound=radius)
    dist = np.atleast_2d(dist)
    idx = np.atleast_2d(idx)
    valid = np.isfinite(dist)
    sizes = valid.sum(axis=1)
    empty = sizes == 0
    if empty.any():
        idx[empty, 0] = self_idx[empty]
        valid[empty, 0] = True
        sizes[empty] = 1
    return idx[valid], sizes


def _wrap_params(tape, params):
    return {k: tape.tensor(v, requires_grad=True) for k, v in params.arrays.items()}


def feature_embed(tape, points, params, weights):
    """Multi-level embedding of the patch; returns (f, retained_indices).

    f has one row per retained point (the n/2 points nearest the patch
    origin); each row concatenates the per-level restored features.
    """
    arch = params.arch
    n = len(points)
    n_ret = min(arch.n_retained, n)
    order = np.argsort(np.linalg.norm(points, axis=1), kind="stable")
    retained = order[:n_ret]
    retained_xyz = points[retained]

    source_xyz = points
    feats = None     # Tensor (len(source), channels) of the previous level
    restored = []
    for lvl, (radius, widths) in enumerate(zip(arch.level_radii, arch.level_widths)):
        count = min(max(1, arch.n_retained >> lvl), len(source_xyz))
        start = int(np.argmax(np.linalg.norm(source_xyz, axis=1)))
        picks = farthest_point_sample(source_xyz, count, first=start)
        centers = source_xyz[picks]

        flat_idx, sizes = _ball_groups(centers, source_xyz, radius, arch.group_cap, picks)
        rel = np.repeat(centers, sizes, axis=0)
        rel = source_xyz[flat_idx] - rel
        h = tape.constant(rel)
        if feats is not None:
            h = ad.concat([h, ad.gather(feats, flat_idx)], axis=1)
        for j in range(len(widths)):
            h = ad.relu(ad.linear(h, weights[f"embed{lvl}_mlp{j}_w"],
                                  weights[f"embed{lvl}_mlp{j}_b"]))
        level_feats = ad.max_over_group(h, sizes)

        # inverse-square-distance interpolation onto the retained points
        k3 = min(arch.interp_k, len(centers))
        d3, i3 = cKDTree(centers).query(retained_xyz, k=k3)
        d3 = np.atleast_2d(d3.reshape(len(retained_xyz), k3))
        i3 = np.atleast_2d(i3.reshape(len(retained_xyz), k3))
        w3 = 1.0 / (d3 ** 2 + 1e-8)
        w3 = w3 / w3.sum(axis=1, keepdims=True)
        level_restored = ad.gather_weighted_sum(level_feats, i3, w3)
        restored.append(ad.relu(ad.linear(level_restored, weights[f"restore{lvl}_w"],
                                          weights[f"restore{lvl}_b"])))

        source_xyz = centers
        feats = level_feats

    return ad.concat(restored, axis=1), retained


def feature_expand(tape, f, params, weights):
    """r independently projected copies of f, stacked along the point axis."""
    arch = params.arch
    copies = []
    for c in range(arch.upsample_r):
        h = ad.relu(ad.linear(f, weights[f"expand{c}_fc0_w"], weights[f"expand{c}_fc0_b"]))
        h = ad.relu(ad.linear(h, weights[f"expand{c}_fc1_w"], weights[f"expand{c}_fc1_b"]))
        copies.append(h)
    return ad.concat(copies, axis=0)


def regress_edge_distance(tape, f_expanded, weights):
    """(f_dist, d): hidden distance feature and raw regressed distance."""
    f_dist = ad.relu(ad.linear(f_expanded, weights["dist_fc0_w"], weights["dist_fc0_b"]))
    d = ad.linear(f_dist, weights["dist_fc1_w"], weights["dist_fc1_b"])
    return f_dist, d


def regress_coordinates(tape, f_expanded, f_dist, retained_xyz, r, weights):
    """Residual coordinates added onto the r-replicated retained inputs."""
    h = ad.concat([f_expanded, f_dist], axis=1)
    h = ad.relu(ad.linear(h, weights["coord_fc0_w"], weights["coord_fc0_b"]))
    residual = ad.linear(h, weights["coord_fc1_w"], weights["coord_fc1_b"])
    return ad.add(residual, ad.replicate(tape.constant(retained_xyz), r))


def forward(tape, points, params: NetworkParams,
            weights=None) -> ForwardResult:
    """Full network forward pass on one normalized patch.

    `weights` may be passed in when the caller already wrapped the parameter
    arrays on this tape (to read gradients back out after backward).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if weights is None:
        weights = _wrap_params(tape, params)
    r = params.arch.upsample_r

    f, retained = feature_embed(tape, points, params, weights)
    f_expanded = feature_expand(tape, f, params, weights)
    f_dist, d = regress_edge_distance(tape, f_expanded, weights)
    out_points = regress_coordinates(tape, f_expanded, f_dist, points[retained], r, weights)

    return ForwardResult(
        points=out_points,
        distances=d,
        retained_indices=retained,
        source_point=np.tile(retained, r),
    )


CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: NetworkParams, extra: dict | None = None,
                    aux: dict | None = None):
    """Versioned container of named arrays plus architecture metadata.

    aux arrays (optimizer state and the like) are stored under an "aux/"
    prefix and returned separately by load_checkpoint.
    """
    meta = {
        "version": CHECKPOINT_VERSION,
        "arch": asdict(params.arch),
        "arch_hash": params.arch.hash(),
        "seed": params.seed,
        "extra": extra or {},
    }
    arrays = dict(params.arrays)
    for k, v in (aux or {}).items():
        arrays[f"aux/{k}"] = v
    with open(path, "wb") as fh:   # np.savez would append .npz to a str path
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **arrays)


class CheckpointError(RuntimeError):
    pass


def load_checkpoint(path, expected_arch: Architecture | None = None):
    """Load (params, extra, aux); refuses architecture-hash mismatches."""
    with np.load(path) as data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path}: not a parameter checkpoint")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        arch_dict = meta["arch"]
        for key in ("level_radii", "expand_channels"):
            arch_dict[key] = tuple(arch_dict[key])
        arch_dict["level_widths"] = tuple(tuple(w) for w in arch_dict["level_widths"])
        arch = Architecture(**arch_dict)
        if arch.hash() != meta["arch_hash"]:
            raise CheckpointError(f"{path}: architecture hash mismatch")
        if expected_arch is not None and expected_arch.hash() != meta["arch_hash"]:
            raise CheckpointError(
                f"{path}: checkpoint architecture {meta['arch_hash']} does not match "
                f"expected {expected_arch.hash()}")
        arrays, aux = {}, {}
        for k in data.files:
            if k == "__meta__":
                continue
            if k.startswith("aux/"):
                aux[k[4:]] = data[k]
            else:
                arrays[k] = data[k]
    params = NetworkParams(arch, arrays, meta["seed"])
    for name, (fan_in, fan_out) in arch.layer_shapes().items():
        if params.arrays[name + "_w"].shape != (fan_in, fan_out):
            raise CheckpointError(f"{path}: array {name}_w has wrong shape")
    return params, meta["extra"], aux
