import struct

import numpy as np
import pytest

from splatpoison.camera import Camera


def scripted_ply_bytes(fields):
    """Independent PLY writer used as the round-trip oracle.

    ``fields`` is a list of (name, (N,) float array) in property order.
    """
    n = len(fields[0][1])
    header = b"ply\nformat binary_little_endian 1.0\n"
    header += f"element vertex {n}\n".encode()
    for name, _ in fields:
        header += f"property float {name}\n".encode()
    header += b"end_header\n"
    body = b""
    for i in range(n):
        for _, arr in fields:
            body += struct.pack("<f", float(arr[i]))
    return header + body


def random_cloud_fields(rng, n):
    """Random but valid canonical-layout field arrays (float32-exact)."""
    f32 = lambda a: np.asarray(a, dtype=np.float32).astype(np.float64)
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    # store as float32 then renormalize in float64 so they are unit to 1e-6
    quats = np.asarray(quats, dtype=np.float32).astype(np.float64)
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return {
        "positions": f32(rng.uniform(-5, 5, (n, 3))),
        "rotations": quats,
        "log_scales": f32(rng.uniform(-3, 0.5, (n, 3))),
        "opacity_logits": f32(rng.uniform(-4, 4, n)),
        "colors_dc": f32(rng.uniform(-1.5, 1.5, (n, 3))),
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def identity_camera():
    return Camera(width=100, height=80, fx=90.0, fy=90.0, cx=50.0, cy=40.0,
                  camera_to_world=np.eye(4))
