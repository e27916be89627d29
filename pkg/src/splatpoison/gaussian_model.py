"""Explicit 3DGS scene container and binary PLY I/O.

The on-disk layout follows the de-facto 3DGS exporter convention:
binary little-endian PLY, one vertex per Gaussian, float32 properties
``x y z [...] f_dc_0..2 [f_rest_*] opacity scale_0..2 rot_0..3``.
Quaternions are stored w-first.  Any properties beyond the required set
(normals, higher SH bands) are preserved untouched so poisoned files stay
loadable by external viewers.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, FormatError

# DC-band spherical harmonic constant: rgb = color_dc * SH_C0 + 0.5
SH_C0 = 0.28209479177387814

REQUIRED_PROPS = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

# canonical layout for clouds we create ourselves (no normals, no f_rest)
_CANONICAL_PROPS = REQUIRED_PROPS


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def dc_to_rgb(color_dc):
    """Activated color of the DC SH band, clipped to [0, 1]."""
    return np.clip(np.asarray(color_dc, dtype=np.float64) * SH_C0 + 0.5, 0.0, 1.0)


def rgb_to_dc(rgb):
    """Inverse of :func:`dc_to_rgb` for rgb in [0, 1]."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


@dataclass(frozen=True)
class GaussianCloud:
    """Immutable collection of anisotropic 3D Gaussians.

    Stored struct-of-arrays as a single float32 matrix ``raw`` of shape
    (N, P) whose columns are named by ``property_names``; the accessors
    below pull out the interpreted fields.  Keeping the raw columns (and
    their original order) makes the PLY round trip bit-exact.
    """

    raw: np.ndarray                      # (N, P) float32
    property_names: tuple                # length P
    provenance: str = ""
    _col: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.raw.ndim != 2 or self.raw.shape[1] != len(self.property_names):
            raise ContractError("raw array shape does not match property names")
        object.__setattr__(
            self, "_col", {n: i for i, n in enumerate(self.property_names)}
        )
        for name in REQUIRED_PROPS:
            if name not in self._col:
                raise FormatError(f"missing required property '{name}'")

    def __len__(self):
        return self.raw.shape[0]

    def _cols(self, names):
        idx = [self._col[n] for n in names]
        return self.raw[:, idx].astype(np.float64)

    @property
    def positions(self):
        return self._cols(("x", "y", "z"))

    @property
    def rotations(self):
        """Unit quaternions, w-first, shape (N, 4)."""
        return self._cols(("rot_0", "rot_1", "rot_2", "rot_3"))

    @property
    def log_scales(self):
        return self._cols(("scale_0", "scale_1", "scale_2"))

    @property
    def opacity_logits(self):
        return self._cols(("opacity",))[:, 0]

    @property
    def opacities(self):
        """Activated (sigmoid) opacities in (0, 1)."""
        return sigmoid(self.opacity_logits)

    @property
    def colors_dc(self):
        return self._cols(("f_dc_0", "f_dc_1", "f_dc_2"))

    @property
    def colors_rgb(self):
        return dc_to_rgb(self.colors_dc)

    @classmethod
    def from_fields(cls, positions, rotations, log_scales, opacity_logits,
                    colors_dc, provenance=""):
        """Build a cloud with the canonical property layout."""
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        rotations = np.atleast_2d(np.asarray(rotations, dtype=np.float64))
        log_scales = np.atleast_2d(np.asarray(log_scales, dtype=np.float64))
        opacity_logits = np.atleast_1d(np.asarray(opacity_logits, dtype=np.float64))
        colors_dc = np.atleast_2d(np.asarray(colors_dc, dtype=np.float64))
        n = positions.shape[0]
        rotations = _normalize_quats(rotations)
        raw = np.empty((n, len(_CANONICAL_PROPS)), dtype=np.float32)
        raw[:, 0:3] = positions
        raw[:, 3:6] = colors_dc
        raw[:, 6] = opacity_logits
        raw[:, 7:10] = log_scales
        raw[:, 10:14] = rotations
        return cls(raw=raw, property_names=_CANONICAL_PROPS, provenance=provenance)

    def append(self, other: "GaussianCloud") -> "GaussianCloud":
        """New cloud with ``other``'s points appended; self is a prefix.

        Extra properties of self (f_rest, normals) are zero-filled for the
        appended points.
        """
        rows = np.zeros((len(other), self.raw.shape[1]), dtype=np.float32)
        for j, name in enumerate(self.property_names):
            if name in other._col:
                rows[:, j] = other.raw[:, other._col[name]]
        return replace(self, raw=np.vstack([self.raw, rows]), _col={})


def _normalize_quats(q):
    """Normalize quaternion rows, but leave already-unit rows untouched so
    repeated load/normalize cycles stay bit-stable."""
    q = np.array(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1)
    if np.any(norms == 0.0):
        raise FormatError("zero-norm quaternion")
    off = np.abs(norms - 1.0) > 1e-6
    if np.any(off):
        q[off] = q[off] / norms[off, None]
    return q


# ---------------------------------------------------------------------------
# PLY I/O

def _parse_header(f):
    magic = f.readline().strip()
    if magic != b"ply":
        raise FormatError("not a PLY file")
    fmt = f.readline().strip()
    if fmt != b"format binary_little_endian 1.0":
        raise FormatError("only binary little-endian PLY is supported")
    n_vertices = None
    props = []
    in_vertex = False
    while True:
        line = f.readline()
        if not line:
            raise FormatError("unexpected EOF in PLY header")
        line = line.strip()
        if line == b"end_header":
            break
        parts = line.split()
        if parts[0] == b"comment":
            continue
        if parts[0] == b"element":
            if parts[1] == b"vertex":
                n_vertices = int(parts[2])
                in_vertex = True
            else:
                in_vertex = False
        elif parts[0] == b"property" and in_vertex:
            if parts[1] not in (b"float", b"float32"):
                raise FormatError(
                    f"unsupported property type {parts[1].decode()}"
                )
            props.append(parts[2].decode())
    if n_vertices is None:
        raise FormatError("no vertex element in PLY header")
    return n_vertices, props


def load_ply(path) -> GaussianCloud:
    """Read a 3DGS PLY file into a :class:`GaussianCloud`.

    Quaternions are normalized on ingest; NaN positions are rejected.
    """
    with open(path, "rb") as f:
        n, props = _parse_header(f)
        for name in REQUIRED_PROPS:
            if name not in props:
                raise FormatError(f"missing required property '{name}'")
        payload = f.read(4 * n * len(props))
    if len(payload) != 4 * n * len(props):
        raise FormatError("truncated PLY payload")
    raw = np.frombuffer(payload, dtype="<f4").reshape(n, len(props)).copy()
    col = {p: i for i, p in enumerate(props)}
    xyz = raw[:, [col["x"], col["y"], col["z"]]]
    bad = np.where(~np.isfinite(xyz).all(axis=1))[0]
    if bad.size:
        raise FormatError(f"non-finite position at vertex {bad[0]}")
    quat_idx = [col[f"rot_{i}"] for i in range(4)]
    raw[:, quat_idx] = _normalize_quats(raw[:, quat_idx].astype(np.float64))
    return GaussianCloud(raw=raw, property_names=tuple(props), provenance=str(path))


def write_ply(cloud: GaussianCloud, path) -> None:
    """Write a cloud back out in the same property layout load_ply accepts."""
    if len(cloud) == 0:
        raise ContractError("refusing to write an empty cloud")
    header = io.BytesIO()
    header.write(b"ply\n")
    header.write(b"format binary_little_endian 1.0\n")
    header.write(f"element vertex {len(cloud)}\n".encode())
    for name in cloud.property_names:
        header.write(f"property float {name}\n".encode())
    header.write(b"end_header\n")
    with open(path, "wb") as f:
        f.write(header.getvalue())
        f.write(np.ascontiguousarray(cloud.raw, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# Covariance

def _rotation_matrices(quats):
    """Batch w-first quaternion -> rotation matrix, shape (N, 3, 3)."""
    q = np.atleast_2d(quats)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    R = np.empty((q.shape[0], 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariances(cloud: GaussianCloud) -> np.ndarray:
    """World-space 3x3 covariances Sigma = R diag(exp(s))^2 R^T, shape (N,3,3)."""
    R = _rotation_matrices(cloud.rotations)
    S2 = np.exp(cloud.log_scales) ** 2          # (N, 3)
    return np.einsum("nij,nj,nkj->nik", R, S2, R)


def covariance_of(rotation, log_scale) -> np.ndarray:
    """Single-point covariance from a w-first unit quaternion and log scales."""
    R = _rotation_matrices(np.asarray(rotation, dtype=np.float64))[0]
    S2 = np.exp(np.asarray(log_scale, dtype=np.float64)) ** 2
    return R @ np.diag(S2) @ R.T
