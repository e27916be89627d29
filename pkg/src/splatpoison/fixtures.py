"""Deterministic synthetic scenes for tests, ablations, and acceptance runs.

Kinds:
  wall     - opaque Gaussian slab between a poisoned camera and innocent
             cameras on the far side (occlusion attack mode)
  corridor - cameras along a line with monotonically growing clutter, so
             view-density scores rise with camera index
  shell    - ring of inward-facing innocent cameras around a central
             cluster, plus one outward-facing poisoned camera
             (out-of-coverage attack mode)
  empty    - background plane only
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import Camera
from .errors import ContractError
from .gaussian_model import GaussianCloud, logit, rgb_to_dc

POISONED_VIEW_ID = "poisoned"


@dataclass(frozen=True)
class SceneSpec:
    kind: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("wall", "corridor", "shell", "empty"):
            raise ContractError(f"unknown scene kind '{self.kind}'")


def _look_at(eye, target, up=(0.0, -1.0, 0.0)):
    """Camera-to-world pose with +z toward target (+y-down convention)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    right = np.cross(np.asarray(up, dtype=np.float64), fwd)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross([1.0, 0.0, 0.0], fwd)
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = fwd
    pose[:3, 3] = eye
    return pose


def _camera(eye, target, size=400, fov_deg=60.0):
    f = size / (2.0 * np.tan(np.radians(fov_deg) / 2.0))
    return Camera(width=size, height=size, fx=f, fy=f,
                  cx=size / 2.0, cy=size / 2.0,
                  camera_to_world=_look_at(eye, target))


def _plane_splats(rng, center, normal_axis, half_u, half_v, n, color,
                  opacity=0.95, sigma=None, jitter=0.0):
    """Jittered grid of isotropic splats on an axis-aligned plane."""
    side = int(np.ceil(np.sqrt(n)))
    axes = [a for a in range(3) if a != normal_axis]
    us = np.linspace(-half_u, half_u, side)
    vs = np.linspace(-half_v, half_v, side)
    gu, gv = np.meshgrid(us, vs)
    pos = np.tile(np.asarray(center, dtype=np.float64), (side * side, 1))
    pos[:, axes[0]] += gu.ravel()
    pos[:, axes[1]] += gv.ravel()
    if jitter > 0:
        pos += rng.normal(0.0, jitter, pos.shape)
    if sigma is None:
        sigma = 1.6 * (2.0 * half_u) / side   # overlap neighbors
    n_pts = pos.shape[0]
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (n_pts, 1))
    ls = np.full((n_pts, 3), np.log(sigma))
    op = np.full(n_pts, float(logit(opacity)))
    rgbs = np.tile(np.asarray(color, dtype=np.float64), (n_pts, 1))
    rgbs += rng.normal(0.0, 0.02, rgbs.shape)
    dc = rgb_to_dc(np.clip(rgbs, 0.05, 0.95))
    return pos, quat, ls, op, dc


def _stack(parts, provenance):
    pos = np.vstack([p[0] for p in parts])
    quat = np.vstack([p[1] for p in parts])
    ls = np.vstack([p[2] for p in parts])
    op = np.concatenate([p[3] for p in parts])
    dc = np.vstack([p[4] for p in parts])
    return GaussianCloud.from_fields(pos, quat, ls, op, dc,
                                     provenance=provenance)


def _make_wall(seed, params):
    rng = np.random.default_rng(seed)
    n_wall = int(params.get("n_wall", 4000))
    n_bg = int(params.get("n_background", 9000))
    size = int(params.get("image_size", 400))
    wall_z = 5.0
    bg_z = 10.0
    parts = [
        # background plane: wide, covers the whole poisoned-view frustum
        _plane_splats(rng, (0, 0, bg_z), 2, 7.0, 7.0, n_bg, (0.25, 0.45, 0.3)),
        # opaque slab with thickness: three layers around z=5
        _plane_splats(rng, (0, 0, wall_z - 0.15), 2, 2.6, 2.6, n_wall // 2,
                      (0.6, 0.35, 0.25)),
        _plane_splats(rng, (0, 0, wall_z), 2, 2.6, 2.6, n_wall // 4,
                      (0.55, 0.3, 0.2)),
        _plane_splats(rng, (0, 0, wall_z + 0.15), 2, 2.6, 2.6, n_wall // 4,
                      (0.5, 0.3, 0.25)),
    ]
    cloud = _stack(parts, "fixture:wall")
    cams = [(_camera((0, 0, 0), (0, 0, wall_z), size=size), POISONED_VIEW_ID)]
    # innocent cameras beyond the wall, looking back at it: the region
    # between the poisoned camera and the wall is occluded for them
    for k, x in enumerate((-2.0, 0.0, 2.0)):
        cams.append((_camera((x, 0, 8.0), (0, 0, wall_z), size=size),
                     f"innocent_{k}"))
    return cloud, cams


def _make_corridor(seed, params):
    rng = np.random.default_rng(seed)
    n_cams = int(params.get("n_cameras", 8))
    size = int(params.get("image_size", 400))
    spacing = float(params.get("spacing", 8.0))
    base = int(params.get("base_points", 40))
    parts = []
    cams = []

    def scatter(x, n, z_lo, z_hi, sigma, opacity):
        pts = np.empty((n, 3))
        zs = rng.uniform(z_lo, z_hi, n)
        half = 0.55 * zs    # stay inside the 60 deg frustum
        pts[:, 0] = x + rng.uniform(-1, 1, n) * half
        pts[:, 1] = rng.uniform(-1, 1, n) * half
        pts[:, 2] = zs
        quat = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
        ls = np.full((n, 3), np.log(sigma))
        op = np.full(n, float(logit(opacity)))
        dc = rgb_to_dc(np.clip(rng.normal(0.5, 0.1, (n, 3)), 0.05, 0.95))
        return pts, quat, ls, op, dc

    for i in range(n_cams):
        x = i * spacing
        # backdrop plane for each camera cell so every ray has a depth
        parts.append(_plane_splats(rng, (x, 0, 6.0), 2, 3.2, 3.2, 900,
                                   (0.3, 0.3, 0.5)))
        # mid-range clutter grows geometrically with index so KDE smoothing
        # and corridor-end edge effects cannot flatten the density ordering
        parts.append(scatter(x, base * 2 ** i, 1.2, 5.2, 0.05, 0.5))
        if i > 0:
            # near-camera floaters: cover part of later views' near field,
            # which raises their density score and veils/blocks placement
            parts.append(scatter(x, 3 * i * i, 0.12, 0.26, 0.012, 0.6))
        cams.append((_camera((x, 0, 0), (x, 0, 6.0), size=size), f"cam_{i:02d}"))
    return _stack(parts, "fixture:corridor"), cams


def _make_shell(seed, params):
    rng = np.random.default_rng(seed)
    n_cams = int(params.get("n_cameras", 8))
    size = int(params.get("image_size", 400))
    n_cluster = int(params.get("n_cluster", 6000))
    radius = 6.0
    pts = rng.normal(0.0, 1.0, (n_cluster, 3))
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (n_cluster, 1))
    ls = np.full((n_cluster, 3), np.log(0.08))
    op = np.full(n_cluster, float(logit(0.8)))
    dc = rgb_to_dc(np.clip(rng.normal(0.5, 0.15, (n_cluster, 3)), 0.05, 0.95))
    # thin distant shell of faint splats so the outward view has geometry
    far = rng.normal(0.0, 1.0, (2000, 3))
    far = 20.0 * far / np.linalg.norm(far, axis=1, keepdims=True)
    quat_f = np.tile([1.0, 0.0, 0.0, 0.0], (2000, 1))
    ls_f = np.full((2000, 3), np.log(0.6))
    op_f = np.full(2000, float(logit(0.7)))
    dc_f = rgb_to_dc(np.clip(rng.normal(0.4, 0.1, (2000, 3)), 0.05, 0.95))
    cloud = _stack([(pts, quat, ls, op, dc),
                    (far, quat_f, ls_f, op_f, dc_f)], "fixture:shell")
    cams = []
    for k in range(n_cams):
        ang = 2.0 * np.pi * k / n_cams
        eye = (radius * np.cos(ang), 0.0, radius * np.sin(ang))
        cams.append((_camera(eye, (0, 0, 0), size=size), f"innocent_{k}"))
    # poisoned camera on the ring facing outward, away from the cluster
    cams.append((_camera((radius, 0, 0), (2 * radius, 0, 0), size=size),
                 POISONED_VIEW_ID))
    return cloud, cams


def _make_empty(seed, params):
    rng = np.random.default_rng(seed)
    size = int(params.get("image_size", 400))
    parts = [_plane_splats(rng, (0, 0, 10.0), 2, 7.0, 7.0, 4000,
                           (0.35, 0.35, 0.35))]
    cams = [(_camera((0, 0, 0), (0, 0, 10.0), size=size), POISONED_VIEW_ID),
            (_camera((3, 0, 0), (0, 0, 10.0), size=size), "innocent_0"),
            (_camera((-3, 0, 0), (0, 0, 10.0), size=size), "innocent_1")]
    return _stack(parts, "fixture:empty"), cams


_MAKERS = {"wall": _make_wall, "corridor": _make_corridor,
           "shell": _make_shell, "empty": _make_empty}


def make_scene(spec: SceneSpec):
    """Generate (GaussianCloud, [(Camera, view id), ...]) for a spec."""
    return _MAKERS[spec.kind](spec.seed, spec.params)


def make_sprite(size=32, seed=0, kind="rings"):
    """Small deterministic RGBA test sprite with a full alpha mask."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot(yy - size / 2 + 0.5, xx - size / 2 + 0.5)
    rgba = np.zeros((size, size, 4), dtype=np.uint8)
    if kind == "rings":
        # gentle spatial frequency: ~1 px splats cannot carry sharper detail
        rgba[:, :, 0] = np.uint8(255 * (0.5 + 0.45 * np.cos(r * 0.25)))
        rgba[:, :, 1] = np.uint8(np.clip(255 * (1.0 - r / size), 0, 255))
        rgba[:, :, 2] = 200
    elif kind == "white":
        rgba[:, :, :3] = 255
    else:
        rgba[:, :, :3] = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    rgba[:, :, 3] = 255
    return rgba
