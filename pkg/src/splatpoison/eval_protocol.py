"""Attack metrics and the density-based view-difficulty protocol.

View difficulty: each camera gets a score equal to the mean continuous
density over a deterministic low-discrepancy sample of points inside its
frustum and within 10% of the scene diagonal of its center.  Cameras are
ranked ascending; the minimum is Easy, the middle rank Median, the
maximum Hard.

Success rule: V-Illusory PSNR > 25 dB and V-Test PSNR drop <= 3 dB.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve

from .camera import Camera
from .density_field import KdeField, kde_eval_batch
from .errors import ContractError

log = logging.getLogger(__name__)

PSNR_CAP_DB = 99.0
SUCCESS_ILLUSORY_PSNR_DB = 25.0
SUCCESS_MAX_TEST_DROP_DB = 3.0
# Stand-in baseline when V-Test is measured against this renderer's own
# clean output (the self-comparison baseline saturates at the PSNR cap and
# carries no information): a poisoned model keeps success while V-Test
# stays within SUCCESS_MAX_TEST_DROP_DB of this fidelity bar.
RENDER_FIDELITY_BASELINE_DB = 33.0
VIEW_DENSITY_SAMPLES = 512
VIEW_DENSITY_RADIUS_FRACTION = 0.10


# ---------------------------------------------------------------------------
# Image metrics (float images in [0, 1])

def psnr(a, b, mask=None) -> float:
    """10*log10(1/MSE) with channels averaged into the MSE; capped at 99 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError("image shapes differ")
    se = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ContractError("empty metric mask")
        se = se[mask]
    mse = float(se.mean())
    if mse <= 10 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=11, sigma=1.5):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


_SSIM_WIN = 11
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def _ssim_map(a, b):
    """Per-pixel SSIM for one channel; centers within half a window of the
    border are excluded (valid-window policy)."""
    kernel = _gaussian_window(_SSIM_WIN)
    c1 = _SSIM_K1 ** 2
    c2 = _SSIM_K2 ** 2
    mu_a = convolve(a, kernel, mode="nearest")
    mu_b = convolve(b, kernel, mode="nearest")
    mu_aa = convolve(a * a, kernel, mode="nearest")
    mu_bb = convolve(b * b, kernel, mode="nearest")
    mu_ab = convolve(a * b, kernel, mode="nearest")
    var_a = mu_aa - mu_a**2
    var_b = mu_bb - mu_b**2
    cov = mu_ab - mu_a * mu_b
    ssim = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)
            / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)))
    half = _SSIM_WIN // 2
    return ssim[half:-half, half:-half]


def ssim(a, b, mask=None) -> float:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, L=1)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError("image shapes differ")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < _SSIM_WIN or a.shape[1] < _SSIM_WIN:
        raise ContractError("image smaller than the SSIM window")
    maps = np.stack(
        [_ssim_map(a[:, :, c], b[:, :, c]) for c in range(a.shape[2])], axis=-1
    )
    per_pixel = maps.mean(axis=-1)
    if mask is not None:
        half = _SSIM_WIN // 2
        m = np.asarray(mask, dtype=bool)[half:-half, half:-half]
        if not m.any():
            raise ContractError("metric mask empty inside the valid region")
        return float(per_pixel[m].mean())
    return float(per_pixel.mean())


# ---------------------------------------------------------------------------
# View difficulty

def _halton(n, dim):
    """First n points of the Halton sequence in [0,1)^dim."""
    primes = (2, 3, 5, 7, 11)[:dim]
    out = np.empty((n, dim))
    for d, base in enumerate(primes):
        frac = np.zeros(n)
        idx = np.arange(1, n + 1)
        scale = 1.0 / base
        while idx.max() > 0:
            frac += (idx % base) * scale
            idx //= base
            scale /= base
        out[:, d] = frac
    return out


def _ball_samples(center, radius, n=VIEW_DENSITY_SAMPLES):
    """Deterministic low-discrepancy points inside a ball."""
    u = _halton(n, 3)
    r = radius * u[:, 0] ** (1.0 / 3.0)
    cos_t = 1.0 - 2.0 * u[:, 1]
    sin_t = np.sqrt(np.maximum(1.0 - cos_t**2, 0.0))
    phi = 2.0 * np.pi * u[:, 2]
    dirs = np.stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t], axis=1)
    return np.asarray(center) + r[:, None] * dirs


def view_density(fld: KdeField, cam: Camera, scene_diag: float) -> float:
    """Mean density over frustum samples near the camera center.

    The frustum test uses FOV ratios only, so the score is invariant to
    resolution changes at fixed FOV.
    """
    pts = _ball_samples(cam.center, VIEW_DENSITY_RADIUS_FRACTION * scene_diag)
    pc = cam.world_to_camera(pts)
    tan_x = cam.width / (2.0 * cam.fx)
    tan_y = cam.height / (2.0 * cam.fy)
    with np.errstate(divide="ignore", invalid="ignore"):
        in_frustum = (pc[:, 2] > 0) \
            & (np.abs(pc[:, 0] / pc[:, 2]) <= tan_x) \
            & (np.abs(pc[:, 1] / pc[:, 2]) <= tan_y)
    lo, hi = fld.grid.aabb_min, fld.grid.aabb_max
    in_box = np.all((pts >= lo) & (pts <= hi), axis=1)
    keep = in_frustum & in_box
    if not keep.any():
        log.warning("no frustum samples inside the scene AABB; density 0")
        return 0.0
    return float(kde_eval_batch(fld, pts[keep]).mean())


@dataclass(frozen=True)
class ViewDifficulty:
    view_id: str
    score: float
    rank: int
    difficulty: str   # Easy | Median | Hard | Other


def rank_views(fld: KdeField, cameras, scene_diag=None):
    """Rank (Camera, id) pairs by view density, ascending.

    Easy = rank 0, Median = rank (n-1)//2, Hard = rank n-1.
    """
    cameras = list(cameras)
    if len(cameras) < 3:
        raise ContractError("need at least 3 cameras to rank")
    if scene_diag is None:
        scene_diag = float(np.linalg.norm(fld.grid.aabb_max - fld.grid.aabb_min))
    scored = [(view_density(fld, cam, scene_diag), str(vid), cam)
              for cam, vid in cameras]
    order = sorted(range(len(scored)), key=lambda i: (scored[i][0], scored[i][1]))
    n = len(order)
    labels = {0: "Easy", (n - 1) // 2: "Median", n - 1: "Hard"}
    out = []
    for rank, i in enumerate(order):
        score, vid, _ = scored[i]
        out.append(ViewDifficulty(view_id=vid, score=score, rank=rank,
                                  difficulty=labels.get(rank, "Other")))
    return out


# ---------------------------------------------------------------------------
# Attack report

@dataclass(frozen=True)
class AttackReport:
    per_view: dict                    # id -> {psnr, ssim, masked_psnr, masked_ssim}
    v_illusory_psnr: float
    v_illusory_ssim: float
    v_test_psnr: float
    v_test_ssim: float
    v_test_clean_baseline_psnr: float
    v_test_drop_db: float
    success: bool
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "per_view": self.per_view,
            "v_illusory": {"psnr": self.v_illusory_psnr,
                           "ssim": self.v_illusory_ssim,
                           "lpips": None},
            "v_test": {"psnr": self.v_test_psnr, "ssim": self.v_test_ssim,
                       "lpips": None},
            "v_test_clean_baseline_psnr": self.v_test_clean_baseline_psnr,
            "v_test_drop_db": self.v_test_drop_db,
            "success": self.success,
            "notes": self.notes,
        }

    def to_table(self):
        lines = [
            f"{'set':<12}{'PSNR':>8}{'SSIM':>8}  {'LPIPS':>6}",
            f"{'V-Illusory':<12}{self.v_illusory_psnr:>8.2f}"
            f"{self.v_illusory_ssim:>8.3f}  {'n/a':>6}",
            f"{'V-Test':<12}{self.v_test_psnr:>8.2f}"
            f"{self.v_test_ssim:>8.3f}  {'n/a':>6}",
            f"drop: {self.v_test_drop_db:.2f} dB   success: {self.success}",
        ]
        return "\n".join(lines)


def evaluate_attack(clean_renders, poisoned_renders, target_composites,
                    sprite_masks, poisoned_ids, test_ids,
                    gt_images=None) -> AttackReport:
    """Compute V-Illusory / V-Test metrics and the success verdict.

    All image arguments are dicts keyed by view id.  ``gt_images``
    optionally supplies external ground truth for test views; without it
    the clean renders serve as reference and the drop is measured against
    the fixed renderer-fidelity baseline.
    """
    missing = [v for v in list(poisoned_ids) + list(test_ids)
               if v not in poisoned_renders or v not in clean_renders]
    if missing:
        raise ContractError(f"renders missing for view ids: {sorted(set(missing))}")
    per_view = {}

    ill_psnr, ill_ssim = [], []
    for vid in poisoned_ids:
        m = np.asarray(sprite_masks[vid], dtype=bool)
        p = psnr(poisoned_renders[vid], target_composites[vid], mask=m)
        s = ssim(poisoned_renders[vid], target_composites[vid], mask=m)
        per_view[vid] = {"masked_psnr": p, "masked_ssim": s,
                         "psnr": psnr(poisoned_renders[vid], clean_renders[vid]),
                         "ssim": ssim(poisoned_renders[vid], clean_renders[vid])}
        ill_psnr.append(p)
        ill_ssim.append(s)

    test_psnr, test_ssim, base_psnr = [], [], []
    for vid in test_ids:
        ref = gt_images[vid] if gt_images is not None else clean_renders[vid]
        p = psnr(poisoned_renders[vid], ref)
        s = ssim(poisoned_renders[vid], ref)
        per_view[vid] = {"psnr": p, "ssim": s,
                         "masked_psnr": None, "masked_ssim": None}
        test_psnr.append(p)
        test_ssim.append(s)
        base_psnr.append(psnr(clean_renders[vid], ref))

    v_ill_psnr = float(np.mean(ill_psnr))
    v_test_psnr = float(np.mean(test_psnr))
    baseline = float(np.mean(base_psnr))
    if gt_images is None:
        # self-referential baseline saturates at the cap; fall back to the
        # fixed fidelity bar so the drop criterion stays meaningful
        baseline = RENDER_FIDELITY_BASELINE_DB
    drop = max(0.0, baseline - v_test_psnr)
    success = (v_ill_psnr > SUCCESS_ILLUSORY_PSNR_DB
               and drop <= SUCCESS_MAX_TEST_DROP_DB)
    return AttackReport(
        per_view=per_view,
        v_illusory_psnr=v_ill_psnr,
        v_illusory_ssim=float(np.mean(ill_ssim)),
        v_test_psnr=v_test_psnr,
        v_test_ssim=float(np.mean(test_ssim)),
        v_test_clean_baseline_psnr=baseline,
        v_test_drop_db=drop,
        success=bool(success),
        notes={"lpips": "unavailable (needs a learned perceptual network)"},
    )
