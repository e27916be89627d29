"""Density-guided poison injection.

For every masked sprite pixel a ray is cast from the poisoned camera, the
continuous density field is sampled uniformly in t over [t_min, t_max]
(t_max = clean scene depth at that pixel, or an in-box fallback), and one
near-opaque Gaussian carrying the sprite color is inserted at the
minimum-density sample.  A fixed-depth variant is kept as the negative
control for tests and ablations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .camera import Camera, Ray, ray_through_pixel
from .density_field import KdeField, kde_eval_batch
from .errors import ContractError
from .gaussian_model import GaussianCloud, logit, rgb_to_dc

log = logging.getLogger(__name__)

DEFAULT_T_MIN = 0.3
DEFAULT_SAMPLES_PER_RAY = 64
DEFAULT_POISON_OPACITY = 0.99
_AABB_EXIT_SAFETY = 0.95
_MASK_ALPHA_THRESHOLD = 127
# isotropic poison scale as a fraction of the sprite-pixel footprint at t*;
# half the footprint puts +-2 sigma across one poisoned-view pixel, keeping
# the illusion sharp while limiting innocent-view spill
_FOOTPRINT_SIGMA = 0.5


@dataclass(frozen=True)
class IllusorySprite:
    """RGBA sprite plus its placement on the poisoned view's image plane.

    ``offset`` is the image-space (u, v) of the sprite's top-left corner;
    ``scale`` is image pixels per sprite pixel.
    """

    rgba: np.ndarray          # (H, W, 4) uint8
    offset: tuple = (0.0, 0.0)
    scale: float = 1.0

    def __post_init__(self):
        rgba = np.asarray(self.rgba, dtype=np.uint8)
        if rgba.ndim != 3 or rgba.shape[2] != 4:
            raise ContractError("sprite must be an HxWx4 RGBA array")
        object.__setattr__(self, "rgba", rgba)
        if not self.scale > 0:
            raise ContractError("sprite scale must be positive")

    @property
    def mask(self):
        return self.rgba[:, :, 3] > _MASK_ALPHA_THRESHOLD

    @classmethod
    def from_png(cls, path, offset=(0.0, 0.0), scale=1.0):
        from PIL import Image
        rgba = np.asarray(Image.open(path).convert("RGBA"))
        return cls(rgba=rgba, offset=tuple(offset), scale=float(scale))

    def pixel_center_on_image(self, row, col):
        """Image-plane coordinates of sprite pixel (row, col)'s center."""
        u = self.offset[0] + (col + 0.5) * self.scale
        v = self.offset[1] + (row + 0.5) * self.scale
        return u, v

    def footprint_in_bounds(self, cam: Camera) -> bool:
        h, w = self.rgba.shape[:2]
        u0, v0 = self.offset
        return (0 <= u0 and 0 <= v0
                and u0 + w * self.scale <= cam.width
                and v0 + h * self.scale <= cam.height)


@dataclass(frozen=True)
class PoisonConfig:
    t_min: float = DEFAULT_T_MIN
    samples_per_ray: int = DEFAULT_SAMPLES_PER_RAY
    bandwidth_h: float = 7.5           # normalized units, used upstream
    poison_opacity: float = DEFAULT_POISON_OPACITY
    pixel_stride: int = 1

    def __post_init__(self):
        if not self.t_min > 0:
            raise ContractError("t_min must be > 0")
        if self.samples_per_ray < 2:
            raise ContractError("need at least 2 samples per ray")
        if not (0 < self.poison_opacity < 1):
            raise ContractError("poison_opacity must be in (0, 1)")
        if self.pixel_stride < 1:
            raise ContractError("pixel_stride must be >= 1")


@dataclass(frozen=True)
class InjectionResult:
    poisoned_cloud: GaussianCloud
    inserted_count: int
    per_point_log: list = field(default_factory=list)  # (pixel, t*, f*)
    skipped: list = field(default_factory=list)        # pixels with no valid t


def select_min_density(fld: KdeField, ray: Ray, t_min: float, t_max: float,
                       n: int = DEFAULT_SAMPLES_PER_RAY, pixel=None):
    """Minimum-density sample along a ray: (x_min, t*, f*).

    Evaluates f at n uniform t values including both endpoints; ties break
    to the smallest t.
    """
    if not t_max > t_min:
        raise ContractError(
            f"t_max ({t_max}) must exceed t_min ({t_min})"
            + (f" at pixel {pixel}" if pixel is not None else "")
        )
    if n < 2:
        raise ContractError("need at least 2 samples")
    ts = np.linspace(t_min, t_max, n)
    fs = kde_eval_batch(fld, ray.at(ts))
    i = int(np.argmin(fs))           # argmin returns the first (smallest t) tie
    return ray.at(ts[i]), float(ts[i]), float(fs[i])


def _ray_aabb_exit(ray: Ray, lo, hi):
    """Largest t at which the ray is still inside the box, or None if it
    misses the box entirely (slab method)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / ray.direction
    t0 = (np.asarray(lo) - ray.origin) * inv
    t1 = (np.asarray(hi) - ray.origin) * inv
    near = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    far = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    t_enter = near.max()
    t_exit = far.min()
    if t_exit < max(t_enter, 0.0):
        return None
    return float(t_exit)


def depth_bound(depth_map, cam: Camera, px, aabb):
    """Per-pixel t_max: scene depth when covered, else 95% of the AABB exit.

    ``depth_map`` holds view-space z; the value is converted to ray length.
    Returns None (pixel skipped) when the ray misses the AABB.
    """
    u, v = px
    ray = ray_through_pixel(cam, (u, v))
    col = min(int(u), cam.width - 1)
    row = min(int(v), cam.height - 1)
    z = depth_map[row, col]
    if np.isfinite(z):
        # z / (camera-forward component of the unit direction) = ray length
        dz = float(ray.direction @ cam.rotation[:, 2])
        return z / dz
    t_exit = _ray_aabb_exit(ray, *aabb)
    if t_exit is None or t_exit <= 0:
        log.debug("ray through pixel %s misses the scene AABB; skipped", px)
        return None
    return _AABB_EXIT_SAFETY * t_exit


def _poison_rows(cam, sprite, cfg, t_for_pixel, field_eval):
    """Shared scan over masked sprite pixels.

    ``t_for_pixel(ray, u, v, pixel)`` returns (t, f) or None to skip.
    Yields per-pixel insertion records in row-major scan order.
    """
    mask = sprite.mask
    rows = []
    skipped = []
    logrows = []
    for r in range(0, mask.shape[0], cfg.pixel_stride):
        for c in range(0, mask.shape[1], cfg.pixel_stride):
            if not mask[r, c]:
                continue
            u, v = sprite.pixel_center_on_image(r, c)
            ray = ray_through_pixel(cam, (u, v))
            res = t_for_pixel(ray, u, v, (r, c))
            if res is None:
                skipped.append((r, c))
                continue
            t_star, f_star = res
            pos = ray.at(t_star)
            rgb = sprite.rgba[r, c, :3].astype(np.float64) / 255.0
            sigma = _FOOTPRINT_SIGMA * t_star * sprite.scale / cam.fx
            rows.append((pos, rgb, sigma))
            logrows.append(((r, c), t_star, f_star))
    return rows, logrows, skipped


def _build_poison_cloud(rows, opacity):
    pos = np.array([r[0] for r in rows])
    dc = rgb_to_dc(np.array([r[1] for r in rows]))
    ls = np.log(np.array([[r[2]] * 3 for r in rows]))
    quat = np.tile([1.0, 0.0, 0.0, 0.0], (len(rows), 1))
    op = np.full(len(rows), float(logit(opacity)))
    return GaussianCloud.from_fields(pos, quat, ls, op, dc, provenance="poison")


def inject(cloud: GaussianCloud, fld: KdeField, cam_p: Camera,
           sprite: IllusorySprite, cfg: PoisonConfig,
           depth_map: np.ndarray) -> InjectionResult:
    """Density-guided attack: one poison Gaussian per masked sprite pixel."""
    if not sprite.mask.any():
        raise ContractError("sprite mask is empty")
    if not sprite.footprint_in_bounds(cam_p):
        raise ContractError("sprite footprint extends outside the image")
    if depth_map.shape != (cam_p.height, cam_p.width):
        raise ContractError("depth map resolution does not match the camera")
    aabb = (fld.grid.aabb_min, fld.grid.aabb_max)

    def pick(ray, u, v, pixel):
        t_max = depth_bound(depth_map, cam_p, (u, v), aabb)
        if t_max is None or t_max <= cfg.t_min:
            if t_max is not None:
                log.debug("pixel %s: t_max %.3g <= t_min; skipped", pixel, t_max)
            return None
        _, t_star, f_star = select_min_density(
            fld, ray, cfg.t_min, t_max, cfg.samples_per_ray, pixel=pixel
        )
        return t_star, f_star

    rows, logrows, skipped = _poison_rows(cam_p, sprite, cfg, pick, fld)
    if skipped:
        log.warning("%d of %d masked pixels had no valid placement depth",
                    len(skipped), len(rows) + len(skipped))
    if not rows:
        raise ContractError("no sprite pixel produced a valid insertion")
    poison = _build_poison_cloud(rows, cfg.poison_opacity)
    return InjectionResult(poisoned_cloud=cloud.append(poison),
                           inserted_count=len(rows),
                           per_point_log=logrows, skipped=skipped)


def naive_backproject(cloud: GaussianCloud, cam_p: Camera,
                      sprite: IllusorySprite, fixed_t: float,
                      cfg: PoisonConfig = PoisonConfig()) -> InjectionResult:
    """Density-blind control: every poison point at constant ray length."""
    if not fixed_t > 0:
        raise ContractError("fixed_t must be positive")
    if not sprite.mask.any():
        raise ContractError("sprite mask is empty")
    if not sprite.footprint_in_bounds(cam_p):
        raise ContractError("sprite footprint extends outside the image")

    def pick(ray, u, v, pixel):
        return float(fixed_t), float("nan")

    rows, logrows, skipped = _poison_rows(cam_p, sprite, cfg, pick, None)
    poison = _build_poison_cloud(rows, cfg.poison_opacity)
    return InjectionResult(poisoned_cloud=cloud.append(poison),
                           inserted_count=len(rows),
                           per_point_log=logrows, skipped=skipped)
