"""View-consistency disruption: scheduled Gaussian noise on innocent views.

Innocent training images get i.i.d. per-pixel Gaussian noise whose std
decays over the training run; the poisoned view stays bit-exact clean:

    I'_k = I_k                      if v_k is the poisoned view
         = clip(I_k + eta)          otherwise,  eta ~ N(0, sigma_t^2)

with one of three decay schedules for sigma_t:

    linear:  sigma0 * (1 - t/T)
    cosine:  sigma0 * cos(pi*t / 2T)
    sqrt:    sigma0 * sqrt(1 - t/T)

Since the consuming 3DGS trainer is external, the scheduler emits dataset
snapshots at chosen checkpoints instead of perturbing per iteration.
"""

from __future__ import annotations

import hashlib
import json
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

DECAYS = ("linear", "cosine", "sqrt")
DEFAULT_SIGMA0 = 100.0
DEFAULT_DECAY = "linear"


@dataclass(frozen=True)
class NoiseSchedule:
    sigma0: float = DEFAULT_SIGMA0   # 8-bit intensity units
    total_T: int = 30000
    decay: str = DEFAULT_DECAY

    def __post_init__(self):
        if self.sigma0 < 0:
            raise ContractError("sigma0 must be >= 0")
        if self.total_T < 1:
            raise ContractError("total_T must be positive")
        if self.decay not in DECAYS:
            raise ContractError(f"unknown decay '{self.decay}'; pick from {DECAYS}")


def sigma_at(s: NoiseSchedule, t) -> float:
    if not 0 <= t <= s.total_T:
        raise ContractError(f"iteration {t} outside [0, {s.total_T}]")
    u = t / s.total_T
    if s.decay == "linear":
        return s.sigma0 * (1.0 - u)
    if s.decay == "cosine":
        return s.sigma0 * np.cos(np.pi * u / 2.0)
    return s.sigma0 * np.sqrt(1.0 - u)


def _keyed_rng(seed: int, frame_id: str, checkpoint: int) -> np.random.Generator:
    """Counter-style RNG keyed by (seed, frame, checkpoint) so per-frame
    noise is independent of emission order."""
    digest = hashlib.sha256(
        f"{seed}|{frame_id}|{checkpoint}".encode()
    ).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def perturb_view(image, is_poisoned: bool, sigma: float,
                 rng: np.random.Generator) -> np.ndarray:
    """Noisy copy of an 8-bit image (poisoned views pass through unchanged)."""
    image = np.asarray(image, dtype=np.uint8)
    if sigma < 0:
        raise ContractError("sigma must be >= 0")
    if is_poisoned or sigma == 0:
        return image.copy()
    noise = rng.normal(0.0, sigma, size=image.shape)
    out = np.clip(np.rint(image.astype(np.float64) + noise), 0, 255)
    return out.astype(np.uint8)


def emit_perturbed_dataset(images_dir, frames, schedule: NoiseSchedule,
                           checkpoints, out_dir, poisoned_ids, seed: int = 0):
    """One ``noisy_t{t}/`` snapshot per checkpoint, mirroring the input tree.

    ``frames`` is the load_cameras output: (Camera, image relpath, view id).
    Returns the list of snapshot directories written.
    """
    from PIL import Image

    images_dir = Path(images_dir)
    out_dir = Path(out_dir)
    poisoned_ids = set(poisoned_ids)
    for _, rel, vid in frames:
        if not (images_dir / rel).exists():
            raise FileNotFoundError(f"frame '{vid}': image {rel} not found")

    written = []
    for t in checkpoints:
        sigma = float(sigma_at(schedule, t))
        snap = out_dir / f"noisy_t{t}"
        if snap.exists():
            shutil.rmtree(snap)
        snap.mkdir(parents=True)
        manifest = {
            "seed": seed,
            "checkpoint": int(t),
            "sigma": sigma,
            "sigma0": schedule.sigma0,
            "decay": schedule.decay,
            "total_T": schedule.total_T,
            "poisoned_views": sorted(poisoned_ids),
            "frames": [],
        }
        for _, rel, vid in frames:
            src = np.asarray(Image.open(images_dir / rel).convert("RGB"))
            poisoned = vid in poisoned_ids
            out = perturb_view(src, poisoned, sigma, _keyed_rng(seed, vid, int(t)))
            dst = snap / rel
            dst.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(out).save(dst, format="PNG")
            manifest["frames"].append({"id": vid, "image": rel,
                                       "poisoned": poisoned})
        with open(snap / "manifest.json", "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
        written.append(snap)
    return written
