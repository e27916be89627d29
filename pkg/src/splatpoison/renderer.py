"""CPU forward splatting renderer.

Each Gaussian is projected to a 2D Gaussian via the local affine (EWA)
approximation of the perspective map, then alpha-composited front to back
in view-space depth order.  Slow but simple: full per-pixel evaluation
inside each splat's 3-sigma rectangle, no tiling.  Serves as the
verification instrument for every visibility/occlusion claim in the
attack pipeline, so auditability beats speed here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .camera import Camera
from .gaussian_model import GaussianCloud, covariances

# low-pass dilation added to the 2D covariance so sub-pixel splats stay visible
_DILATION_PX2 = 0.3
_NEAR_CLIP = 0.01
_ALPHA_CULL = 1.0 / 255.0
_ALPHA_MAX = 0.99
_COVERAGE_EPS = 1e-4


@dataclass(frozen=True)
class RenderedImage:
    rgb: np.ndarray     # (H, W, 3) float in [0, 1]
    alpha: np.ndarray   # (H, W) accumulated opacity in [0, 1]
    depth: np.ndarray   # (H, W) alpha-weighted expected depth; +inf uncovered


def render(cloud: GaussianCloud, cam: Camera, background=(0.0, 0.0, 0.0)
           ) -> RenderedImage:
    H, W = cam.height, cam.width
    bg = np.asarray(background, dtype=np.float64)
    rgb = np.zeros((H, W, 3))
    trans = np.ones((H, W))           # remaining transmittance
    depth_acc = np.zeros((H, W))
    alpha_acc = np.zeros((H, W))

    if len(cloud) > 0:
        p_cam = cam.world_to_camera(cloud.positions)
        z = p_cam[:, 2]
        keep = z > _NEAR_CLIP
        if np.any(keep):
            p_cam = p_cam[keep]
            z = z[keep]
            cov = covariances(cloud)[keep]
            colors = cloud.colors_rgb[keep]
            opac = cloud.opacities[keep]

            R_wc = cam.rotation.T
            cov_cam = np.einsum("ij,njk,lk->nil", R_wc, cov, R_wc)
            x, y = p_cam[:, 0], p_cam[:, 1]
            # perspective Jacobian rows per point: (2, 3)
            J = np.zeros((len(z), 2, 3))
            J[:, 0, 0] = cam.fx / z
            J[:, 0, 2] = -cam.fx * x / z**2
            J[:, 1, 1] = cam.fy / z
            J[:, 1, 2] = -cam.fy * y / z**2
            cov2d = np.einsum("nij,njk,nlk->nil", J, cov_cam, J)
            cov2d[:, 0, 0] += _DILATION_PX2
            cov2d[:, 1, 1] += _DILATION_PX2

            u = cam.fx * x / z + cam.cx
            v = cam.fy * y / z + cam.cy

            order = np.argsort(z, kind="stable")
            a = cov2d[:, 0, 0]
            b = cov2d[:, 0, 1]
            c = cov2d[:, 1, 1]
            det = a * c - b * b
            # 3-sigma extent from the larger eigenvalue
            lam_max = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0))
            radius = 3.0 * np.sqrt(np.maximum(lam_max, 0)) + 1.0

            for i in order:
                if det[i] <= 0:
                    continue
                x0 = max(int(np.floor(u[i] - radius[i])), 0)
                x1 = min(int(np.ceil(u[i] + radius[i])) + 1, W)
                y0 = max(int(np.floor(v[i] - radius[i])), 0)
                y1 = min(int(np.ceil(v[i] + radius[i])) + 1, H)
                if x0 >= x1 or y0 >= y1:
                    continue
                t_rect = trans[y0:y1, x0:x1]
                if t_rect.max() < _COVERAGE_EPS:
                    continue
                px = np.arange(x0, x1) + 0.5 - u[i]
                py = np.arange(y0, y1) + 0.5 - v[i]
                dx, dy = np.meshgrid(px, py)
                inv_det = 1.0 / det[i]
                power = -0.5 * inv_det * (
                    c[i] * dx * dx - 2.0 * b[i] * dx * dy + a[i] * dy * dy
                )
                alpha = np.minimum(opac[i] * np.exp(power), _ALPHA_MAX)
                alpha[alpha < _ALPHA_CULL] = 0.0
                contrib = t_rect * alpha
                rgb[y0:y1, x0:x1] += contrib[:, :, None] * colors[i]
                depth_acc[y0:y1, x0:x1] += contrib * z[i]
                alpha_acc[y0:y1, x0:x1] += contrib
                trans[y0:y1, x0:x1] = t_rect * (1.0 - alpha)

    rgb = rgb + trans[:, :, None] * bg
    depth = np.full((H, W), np.inf)
    covered = alpha_acc >= _COVERAGE_EPS
    depth[covered] = depth_acc[covered] / alpha_acc[covered]
    return RenderedImage(rgb=np.clip(rgb, 0.0, 1.0),
                         alpha=np.clip(alpha_acc, 0.0, 1.0), depth=depth)


def render_depth(cloud: GaussianCloud, cam: Camera) -> np.ndarray:
    """Depth channel of render; background is irrelevant to depth."""
    return render(cloud, cam).depth


# ---------------------------------------------------------------------------
# Image / depth serialization

DEPTH_MAGIC = 0x44505448  # "DPTH"


def save_png(rgb, path) -> None:
    from PIL import Image
    arr = np.clip(np.rint(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    from PIL import Image
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def save_depth(depth, path, text=False) -> None:
    """Binary: u32 width, u32 height, u32 magic, then float32 row-major.
    text=True writes a PFM-style ASCII alternative instead."""
    depth = np.asarray(depth, dtype=np.float32)
    h, w = depth.shape
    if text:
        with open(path, "w") as f:
            f.write(f"Pf\n{w} {h}\n-1.0\n")
            for row in depth:
                f.write(" ".join(f"{v:.9g}" for v in row) + "\n")
        return
    with open(path, "wb") as f:
        f.write(struct.pack("<3I", w, h, DEPTH_MAGIC))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def load_depth(path) -> np.ndarray:
    with open(path, "rb") as f:
        w, h, magic = struct.unpack("<3I", f.read(12))
        if magic != DEPTH_MAGIC:
            raise ValueError("bad depth file magic")
        return np.frombuffer(f.read(), dtype="<f4").reshape(h, w).astype(np.float64)
