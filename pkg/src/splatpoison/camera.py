"""Pinhole camera model, ray casting, and camera-set JSON ingestion.

Convention: camera space is +z forward, +x right, +y down (COLMAP / 3DGS
exports).  Pixel (u, v) addresses continuous image-plane coordinates;
integer pixel indices get a +0.5 center offset by the callers that
iterate over the pixel grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    camera_to_world: np.ndarray   # 4x4 rigid transform

    def __post_init__(self):
        pose = np.asarray(self.camera_to_world, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "camera_to_world", pose)
        R = pose[:3, :3]
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
            raise FormatError("pose rotation block is not orthonormal")
        if np.linalg.det(R) < 0:
            raise FormatError("pose rotation block is a reflection")
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ContractError("principal point outside the image")

    @property
    def center(self):
        return self.camera_to_world[:3, 3]

    @property
    def rotation(self):
        """World-from-camera rotation (columns are camera axes in world)."""
        return self.camera_to_world[:3, :3]

    def world_to_camera(self, points):
        """Map world points to camera coordinates, shape preserved."""
        pts = np.atleast_2d(points)
        return (pts - self.center) @ self.rotation

    def project(self, points):
        """World points -> (u, v, z_cam).  No culling; z may be <= 0."""
        pc = self.world_to_camera(points)
        z = pc[:, 2]
        u = self.fx * pc[:, 0] / z + self.cx
        v = self.fy * pc[:, 1] / z + self.cy
        return u, v, z


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray   # unit norm

    def at(self, t):
        return self.origin + np.multiply.outer(np.asarray(t), self.direction)


def ray_through_pixel(cam: Camera, px) -> Ray:
    """World-space ray from the camera center through image point (u, v)."""
    u, v = float(px[0]), float(px[1])
    if not (0 <= u < cam.width and 0 <= v < cam.height):
        raise ContractError(f"pixel ({u}, {v}) outside {cam.width}x{cam.height}")
    d_cam = np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])
    d = cam.rotation @ d_cam
    return Ray(origin=cam.center.copy(), direction=d / np.linalg.norm(d))


def ray_directions_for_pixels(cam: Camera, us, vs):
    """Vectorized unit world directions for continuous pixel coordinates."""
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    d_cam = np.stack(
        [(us - cam.cx) / cam.fx, (vs - cam.cy) / cam.fy, np.ones_like(us)], axis=-1
    )
    d = d_cam @ cam.rotation.T
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def load_cameras(path):
    """Read the camera JSON pose format.

    Returns a list of (Camera, image path, view id), file order preserved.
    Each frame gives either fx/fy or fov_x (square pixels).
    """
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"malformed camera JSON: {e}") from e
    if "frames" not in doc:
        raise FormatError("camera JSON missing 'frames'")
    out = []
    for i, fr in enumerate(doc["frames"]):
        try:
            width, height = int(fr["width"]), int(fr["height"])
            if "fov_x" in fr:
                fx = fy = width / (2.0 * np.tan(float(fr["fov_x"]) / 2.0))
            else:
                fx, fy = float(fr["fx"]), float(fr["fy"])
            cx = float(fr.get("cx", width / 2.0))
            cy = float(fr.get("cy", height / 2.0))
            pose = np.asarray(fr["camera_to_world"], dtype=np.float64).reshape(4, 4)
            cam = Camera(width, height, fx, fy, cx, cy, pose)
            out.append((cam, fr.get("image", ""), str(fr.get("id", i))))
        except (KeyError, TypeError) as e:
            raise FormatError(f"frame {i}: missing or bad field ({e})") from e
    return out


def save_cameras(entries, path):
    """Inverse of load_cameras for (Camera, image, id) triples."""
    frames = []
    for cam, image, vid in entries:
        frames.append({
            "id": vid,
            "width": cam.width, "height": cam.height,
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "camera_to_world": [float(x) for x in cam.camera_to_world.ravel()],
            "image": image,
        })
    with open(path, "w") as f:
        json.dump({"frames": frames}, f, indent=1)
