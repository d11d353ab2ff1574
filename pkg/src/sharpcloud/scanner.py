"""Virtual scanning: render a mesh from a ring of depth cameras into a
noisy point cloud.

The noise model is the scan-quantization one: per-image depths are snapped
to ``n_q`` uniform levels and backprojection rays are jittered inside the
pixel footprint.  Depth means range along the (normalized) ray, not z-depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, PointCloud, TriMesh

BACKGROUND = np.inf


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    vertical_fov: float          # degrees
    image_width: int
    image_height: int

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if np.allclose(self.position, self.look_at):
            raise ValueError("camera position coincides with look_at")
        if not 0.0 < self.vertical_fov < 180.0:
            raise ValueError(f"vertical fov must be in (0, 180), got {self.vertical_fov}")

    def basis(self):
        """Right-handed camera frame (forward, right, up)."""
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        nr = np.linalg.norm(right)
        if nr == 0.0:
            raise ValueError("camera up vector is parallel to the view direction")
        right = right / nr
        up = np.cross(right, fwd)
        return fwd, right, up

    def rays(self, pixel_offsets=None):
        """Unit ray directions through each pixel center, shape (h*w, 3).

        pixel_offsets: optional (h*w, 2) jitter in pixel units, each
        component in [-0.5, 0.5], added to the pixel centers.
        """
        fwd, right, up = self.basis()
        w, h = self.image_width, self.image_height
        half_h = math.tan(math.radians(self.vertical_fov) / 2.0)
        half_w = half_h * w / h
        px, py = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
        px = px.ravel().astype(np.float64)
        py = py.ravel().astype(np.float64)
        if pixel_offsets is not None:
            px = px + pixel_offsets[:, 0]
            py = py + pixel_offsets[:, 1]
        x = (2.0 * px / w - 1.0) * half_w
        y = (1.0 - 2.0 * py / h) * half_h
        dirs = fwd[None, :] + x[:, None] * right[None, :] + y[:, None] * up[None, :]
        return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


@dataclass
class DepthImage:
    width: int
    height: int
    depth: np.ndarray  # (height, width), BACKGROUND marks misses

    def foreground(self) -> np.ndarray:
        return np.isfinite(self.depth)


@dataclass
class ScanConfig:
    num_cameras: int = 30
    fov: float = 50.0
    ring_radius: float = 2.0
    perturbation: float = 0.15
    resolution: tuple[int, int] = (160, 120)   # (width, height)
    n_q: int = 80
    seed: int = 0
    pixel_jitter: bool = True

    def __post_init__(self):
        if self.n_q < 1:
            raise ValueError("n_q must be >= 1")
        if self.num_cameras < 1:
            raise ValueError("need at least one camera")


@dataclass
class MeshTransform:
    """Affine map new = scale * v + offset with uniform scale."""

    scale: float
    offset: np.ndarray

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) * self.scale + self.offset

    def invert(self, points):
        return (np.asarray(points, dtype=np.float64) - self.offset) / self.scale


def normalize_mesh(mesh: TriMesh, edges: np.ndarray | None = None):
    """Scale + translate the mesh so its bounding box is centered at the
    origin with longest side exactly 2.

    Edge segments, when given, are transformed identically.  Returns
    (mesh, edges, transform); edges is None when not supplied.
    """
    if len(mesh.vertices) == 0:
        raise GeometryError("cannot normalize an empty mesh")
    lo, hi = mesh.bounding_box()
    center = (lo + hi) / 2.0
    longest = float(np.max(hi - lo))
    if longest == 0.0:
        raise GeometryError("mesh bounding box has zero extent")
    scale = 2.0 / longest
    transform = MeshTransform(scale=scale, offset=-center * scale)
    out_mesh = TriMesh(transform.apply(mesh.vertices), mesh.faces.copy())
    out_edges = None
    if edges is not None:
        edges = np.asarray(edges, dtype=np.float64).reshape(-1, 2, 3)
        out_edges = transform.apply(edges.reshape(-1, 3)).reshape(-1, 2, 3)
    return out_mesh, out_edges, transform


def place_cameras(cfg: ScanConfig, rng: np.random.Generator):
    """Evenly spaced ring of cameras looking at the origin, each offset by a
    random vector orthogonal to its view direction with magnitude
    <= cfg.perturbation."""
    w, h = cfg.resolution
    cams = []
    for i in range(cfg.num_cameras):
        theta = 2.0 * math.pi * i / cfg.num_cameras
        pos = np.array([cfg.ring_radius * math.cos(theta),
                        0.0,
                        cfg.ring_radius * math.sin(theta)])
        view = -pos / np.linalg.norm(pos)
        # orthonormal basis of the plane orthogonal to the view direction
        side = np.cross(view, [0.0, 1.0, 0.0])
        side /= np.linalg.norm(side)
        lift = np.cross(side, view)
        phi = rng.uniform(0.0, 2.0 * math.pi)
        mag = rng.uniform(0.0, cfg.perturbation)
        pos = pos + mag * (math.cos(phi) * side + math.sin(phi) * lift)
        cams.append(Camera(pos, np.zeros(3), np.array([0.0, 1.0, 0.0]),
                           cfg.fov, w, h))
    return cams


def _intersect_rays(origin, dirs, triangles):
    """Nearest two-sided ray-triangle hit per ray (Moller-Trumbore).

    Returns hit distances, BACKGROUND where nothing is hit.
    """
    n = len(dirs)
    t_best = np.full(n, BACKGROUND)
    if len(triangles) == 0:
        return t_best
    eps = 1e-12
    chunk = 64
    for s in range(0, len(triangles), chunk):
        tri = triangles[s:s + chunk]
        v0 = tri[:, 0]
        e1 = tri[:, 1] - v0                      # (m, 3)
        e2 = tri[:, 2] - v0
        pvec = np.cross(dirs[:, None, :], e2[None, :, :])   # (n, m, 3)
        det = np.einsum("md,nmd->nm", e1, pvec)
        ok = np.abs(det) > eps
        inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = origin[None, :] - v0                          # (m, 3), shared origin
        u = np.einsum("md,nmd->nm", tvec, pvec) * inv_det
        qvec = np.cross(tvec, e1)                            # (m, 3)
        v = np.einsum("nd,md->nm", dirs, qvec) * inv_det
        t = np.einsum("md,md->m", e2, qvec)[None, :] * inv_det
        ok &= (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 1e-9)
        t = np.where(ok, t, BACKGROUND)
        t_best = np.minimum(t_best, t.min(axis=1))
    return t_best


def render_depth(mesh: TriMesh, cam: Camera) -> DepthImage:
    """Depth image of the mesh: nearest ray-triangle range per pixel center."""
    t = _intersect_rays(cam.position, cam.rays(), mesh.triangles)
    return DepthImage(cam.image_width, cam.image_height,
                      t.reshape(cam.image_height, cam.image_width))


def quantize_depth(img: DepthImage, n_q: int) -> DepthImage:
    """Snap foreground depths to the nearest of n_q uniform levels spanning
    this image's [min, max] foreground range; exact midpoints snap to the
    lower level."""
    if n_q < 1:
        raise ValueError("n_q must be >= 1")
    depth = img.depth.copy()
    fg = np.isfinite(depth)
    if not fg.any():
        return DepthImage(img.width, img.height, depth)
    lo = float(depth[fg].min())
    hi = float(depth[fg].max())
    if n_q == 1 or hi == lo:
        depth[fg] = lo
        return DepthImage(img.width, img.height, depth)
    spacing = (hi - lo) / (n_q - 1)
    q = (depth[fg] - lo) / spacing
    idx = np.ceil(q - 0.5)          # round-half-down: ties go to the lower level
    idx = np.clip(idx, 0, n_q - 1)
    depth[fg] = lo + idx * spacing
    return DepthImage(img.width, img.height, depth)


def backproject(img: DepthImage, cam: Camera,
                rng: np.random.Generator | None = None) -> PointCloud:
    """One 3D point per foreground pixel, cast along the pixel's ray at the
    stored depth.  When rng is given, rays are jittered uniformly inside the
    pixel footprint (the pixel-location noise of the scan model)."""
    flat = img.depth.ravel()
    fg = np.isfinite(flat)
    if not fg.any():
        return PointCloud(np.zeros((0, 3)))
    offsets = None
    if rng is not None:
        offsets = np.zeros((flat.size, 2))
        offsets[fg] = rng.uniform(-0.5, 0.5, size=(int(fg.sum()), 2))
    dirs = cam.rays(pixel_offsets=offsets)
    pts = cam.position[None, :] + flat[fg, None] * dirs[fg]
    return PointCloud(pts)


def virtual_scan(mesh: TriMesh, cfg: ScanConfig) -> PointCloud:
    """Scan a normalized mesh with the full camera ring: render, quantize,
    backproject, and concatenate all per-camera points.

    Deterministic given cfg.seed; per-camera noise streams are split from
    the master seed so results do not depend on evaluation order.
    """
    root = np.random.SeedSequence(cfg.seed)
    placement_seq, *cam_seqs = root.spawn(cfg.num_cameras + 1)
    cams = place_cameras(cfg, np.random.default_rng(placement_seq))
    clouds = []
    for cam, seq in zip(cams, cam_seqs):
        img = quantize_depth(render_depth(mesh, cam), cfg.n_q)
        rng = np.random.default_rng(seq) if cfg.pixel_jitter else None
        clouds.append(backproject(img, cam, rng).points)
    return PointCloud(np.concatenate(clouds, axis=0))
