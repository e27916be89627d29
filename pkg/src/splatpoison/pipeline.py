"""End-to-end attack pipeline shared by the CLI, sweeps, and tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .density_field import (
    DEFAULT_BANDWIDTH,
    DEFAULT_RESOLUTION,
    make_kde_field,
    voxelize,
)
from .errors import ContractError
from .eval_protocol import AttackReport, evaluate_attack
from .gaussian_model import GaussianCloud
from .poison_injector import (
    IllusorySprite,
    InjectionResult,
    PoisonConfig,
    inject,
    naive_backproject,
)
from .renderer import render


def composite_sprite(clean_rgb, sprite: IllusorySprite):
    """Clean render with the sprite alpha-composited at its placement.

    This is the attack target image for the poisoned view.  Returns
    (composite, mask) at the camera's resolution.
    """
    out = np.array(clean_rgb, dtype=np.float64)
    full_mask = np.zeros(out.shape[:2], dtype=bool)
    h, w = sprite.rgba.shape[:2]
    for r in range(h):
        for c in range(w):
            if not sprite.mask[r, c]:
                continue
            u0 = sprite.offset[0] + c * sprite.scale
            v0 = sprite.offset[1] + r * sprite.scale
            c0, c1 = int(np.floor(u0)), int(np.ceil(u0 + sprite.scale))
            r0, r1 = int(np.floor(v0)), int(np.ceil(v0 + sprite.scale))
            out[r0:r1, c0:c1] = sprite.rgba[r, c, :3] / 255.0
            full_mask[r0:r1, c0:c1] = True
    return out, full_mask


@dataclass(frozen=True)
class AttackRun:
    poisoned_cloud: GaussianCloud
    injection: InjectionResult
    report: AttackReport
    clean_renders: dict     # view id -> rgb
    poisoned_renders: dict  # view id -> rgb
    target_composite: np.ndarray
    mask: np.ndarray


def run_attack(cloud, cameras, poisoned_id, sprite, cfg=PoisonConfig(),
               resolution=DEFAULT_RESOLUTION, bandwidth=DEFAULT_BANDWIDTH,
               background=(0.0, 0.0, 0.0), naive_fixed_t=None) -> AttackRun:
    """Full density-guided attack on one view plus its evaluation.

    ``cameras`` is a list of (Camera, view id); every non-poisoned camera
    becomes a test view.  ``naive_fixed_t`` switches to the density-blind
    control insertion at that ray length.
    """
    cam_map = {vid: cam for cam, vid in cameras}
    if poisoned_id not in cam_map:
        raise ContractError(f"poisoned view '{poisoned_id}' not in camera set")
    cam_p = cam_map[poisoned_id]
    test_ids = [vid for _, vid in cameras if vid != poisoned_id]

    clean = {vid: render(cloud, cam, background) for vid, cam in cam_map.items()}
    if naive_fixed_t is None:
        grid = voxelize(cloud, resolution)
        fld = make_kde_field(grid, bandwidth)
        result = inject(cloud, fld, cam_p, sprite, cfg, clean[poisoned_id].depth)
    else:
        result = naive_backproject(cloud, cam_p, sprite, naive_fixed_t, cfg)

    poisoned = {vid: render(result.poisoned_cloud, cam, background)
                for vid, cam in cam_map.items()}
    target, mask = composite_sprite(clean[poisoned_id].rgb, sprite)
    report = evaluate_attack(
        clean_renders={v: r.rgb for v, r in clean.items()},
        poisoned_renders={v: r.rgb for v, r in poisoned.items()},
        target_composites={poisoned_id: target},
        sprite_masks={poisoned_id: mask},
        poisoned_ids=[poisoned_id],
        test_ids=test_ids,
    )
    return AttackRun(
        poisoned_cloud=result.poisoned_cloud,
        injection=result,
        report=report,
        clean_renders={v: r.rgb for v, r in clean.items()},
        poisoned_renders={v: r.rgb for v, r in poisoned.items()},
        target_composite=target,
        mask=mask,
    )
