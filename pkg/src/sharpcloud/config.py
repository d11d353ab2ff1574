"""Runtime settings: one flat namespace holding every tunable constant,
overridable from a key=value text file and from CLI flags."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .losses import LossConfig
from .network import Architecture
from .pipeline import AugmentConfig, ConsolidateConfig, TrainConfig
from .refine import RefineConfig
from .scanner import ScanConfig


class ConfigError(ValueError):
    pass


@dataclass
class Settings:
    # scanner
    num_cameras: int = 30
    fov: float = 50.0
    ring_radius: float = 2.0
    perturbation: float = 0.15
    resolution_x: int = 160
    resolution_y: int = 120
    n_q: int = 80
    pixel_jitter: bool = True
    # patching
    knn_k: int = 10
    dijkstra_size: int = 2048
    n_hat: int = 1024
    num_centroids: int = 100
    gt_margin: float = 0.1
    # network
    upsample_r: int = 4
    level_radii: tuple = (0.1, 0.2, 0.4, 0.6)
    mlp_widths_12: tuple = (32, 32, 64)
    mlp_widths_34: tuple = (64, 64, 128)
    group_cap: int = 32
    # losses
    alpha: float = 0.1
    beta_regr: float = 0.01
    h: float = 0.03
    repulsion_k: int = 4
    b: float = 0.5
    delta_d_train: float = 0.15
    delta_d_infer: float = 0.05
    # training
    epochs: int = 60
    batch_size: int = 12
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    augment_rotate: bool = True
    augment_translate: bool = True
    augment_scale: bool = True
    augment_noise: bool = True
    augment_shuffle: bool = True
    # inference
    coverage: float = 3.0
    # refinement
    ransac_tol: float = 0.01
    ransac_min_inliers: int = 10
    ransac_iterations: int = 500
    group_size: int = 30
    refine_rounds: int = 3
    fill_min_dist: float = 0.03
    # evaluation
    hist_bins: int = 50
    hist_range_max: float = 0.05

    def scan_config(self, n_q=None, seed=0) -> ScanConfig:
        return ScanConfig(num_cameras=self.num_cameras, fov=self.fov,
                          ring_radius=self.ring_radius, perturbation=self.perturbation,
                          resolution=(self.resolution_x, self.resolution_y),
                          n_q=int(n_q if n_q is not None else self.n_q),
                          seed=seed, pixel_jitter=self.pixel_jitter)

    def architecture(self) -> Architecture:
        return Architecture(n_hat=self.n_hat, upsample_r=self.upsample_r,
                            level_radii=tuple(self.level_radii),
                            level_widths=(tuple(self.mlp_widths_12),
                                          tuple(self.mlp_widths_12),
                                          tuple(self.mlp_widths_34),
                                          tuple(self.mlp_widths_34)),
                            group_cap=self.group_cap)

    def loss_config(self, training: bool) -> LossConfig:
        return LossConfig(alpha=self.alpha, beta_regr=self.beta_regr, h=self.h,
                          repulsion_k=self.repulsion_k, b=self.b,
                          delta_d=self.delta_d_train if training else self.delta_d_infer)

    def train_config(self, seed=0) -> TrainConfig:
        aug = AugmentConfig(rotate=self.augment_rotate, translate=self.augment_translate,
                            scale=self.augment_scale, noise=self.augment_noise,
                            shuffle=self.augment_shuffle)
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size,
                           learning_rate=self.learning_rate, seed=seed,
                           adam_beta1=self.adam_beta1, adam_beta2=self.adam_beta2,
                           adam_eps=self.adam_eps,
                           loss=self.loss_config(training=True), augment=aug)

    def consolidate_config(self, seed=0) -> ConsolidateConfig:
        return ConsolidateConfig(knn_k=self.knn_k, dijkstra_size=self.dijkstra_size,
                                 coverage=self.coverage,
                                 delta_d_infer=self.delta_d_infer, seed=seed)

    def refine_config(self, seed=0) -> RefineConfig:
        return RefineConfig(ransac_tol=self.ransac_tol,
                            ransac_min_inliers=self.ransac_min_inliers,
                            ransac_iterations=self.ransac_iterations,
                            knn_k=self.knn_k, group_size=self.group_size,
                            rounds=self.refine_rounds,
                            fill_min_dist=self.fill_min_dist, seed=seed)


def _coerce(name: str, text: str, current):
    if isinstance(current, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        parts = [p for p in text.replace(",", " ").split() if p]
        kind = type(current[0]) if current else float
        return tuple(kind(p) for p in parts)
    raise ConfigError(f"{name}: unsupported setting type {type(current).__name__}")


def load_settings(path=None) -> Settings:
    """Defaults, optionally overridden by `key = value` lines in a file."""
    settings = Settings()
    if path is None:
        return settings
    known = {f.name for f in fields(Settings)}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#")[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
            try:
                setattr(settings, key, _coerce(key, value.strip(), getattr(settings, key)))
            except (ValueError, ConfigError) as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return settings
