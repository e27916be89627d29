"""Voxelized scene density and its Gaussian-KDE smoothing.

Per-voxel density is the sum of activated opacities of the Gaussians whose
mean falls in the cell.  The continuous field is

    f(x) = (1/|S|) * sum_s K_h(x - c(s)) * rho(s)

with the isotropic 3D Gaussian kernel

    K_h(x) = (2*pi*h^2)^(-3/2) * exp(-||x||^2 / (2 h^2)).

Bandwidths quoted by the CLI and config are in a scene-normalized frame in
which the AABB's longest edge measures 100 units; they are converted to
world units when the field is built, so the same nominal bandwidth
transfers across scenes of different physical scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .gaussian_model import GaussianCloud

NORMALIZED_EDGE = 100.0
DEFAULT_RESOLUTION = (64, 64, 64)
DEFAULT_BANDWIDTH = 7.5          # in normalized units
_DEGENERATE_EPS = 1e-6


def compute_aabb(cloud: GaussianCloud):
    """Componentwise min/max of all means; collapsed axes get 1e-6 padding."""
    if len(cloud) == 0:
        raise ContractError("AABB of an empty cloud")
    pos = cloud.positions
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    flat = hi - lo <= 0
    lo = np.where(flat, lo - _DEGENERATE_EPS, lo)
    hi = np.where(flat, hi + _DEGENERATE_EPS, hi)
    return lo, hi


@dataclass(frozen=True)
class VoxelGrid:
    aabb_min: np.ndarray
    aabb_max: np.ndarray
    resolution: tuple            # (nx, ny, nz)
    densities: np.ndarray        # shape == resolution, >= 0

    def __post_init__(self):
        if not np.all(self.aabb_min < self.aabb_max):
            raise ContractError("aabb_min must be < aabb_max componentwise")
        if self.densities.shape != tuple(self.resolution):
            raise ContractError("density array shape mismatch")
        if not np.all(np.isfinite(self.densities)) or np.any(self.densities < 0):
            raise ContractError("densities must be finite and non-negative")

    @property
    def cell_size(self):
        return (self.aabb_max - self.aabb_min) / np.asarray(self.resolution)

    def centroids(self):
        """Cell centroids, shape (num_cells, 3), C-order over (x, y, z)."""
        axes = [
            self.aabb_min[k] + (np.arange(self.resolution[k]) + 0.5) * self.cell_size[k]
            for k in range(3)
        ]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)

    @property
    def num_cells(self):
        return int(np.prod(self.resolution))


def voxelize(cloud: GaussianCloud, resolution=DEFAULT_RESOLUTION,
             aabb=None) -> VoxelGrid:
    """Accumulate activated opacities into the cell holding each mean.

    Positions exactly on the max face clamp into the last cell.
    """
    resolution = tuple(int(r) for r in resolution)
    if any(r < 1 for r in resolution):
        raise ContractError("resolution components must be >= 1")
    lo, hi = compute_aabb(cloud) if aabb is None else aabb
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    pos = cloud.positions
    frac = (pos - lo) / (hi - lo)
    idx = np.floor(frac * np.asarray(resolution)).astype(np.int64)
    idx = np.clip(idx, 0, np.asarray(resolution) - 1)
    inside = np.all((frac >= 0) & (frac <= 1), axis=1)
    dens = np.zeros(resolution, dtype=np.float64)
    np.add.at(dens, tuple(idx[inside].T), cloud.opacities[inside])
    return VoxelGrid(aabb_min=lo, aabb_max=hi, resolution=resolution,
                     densities=dens)


@dataclass(frozen=True)
class KdeField:
    """Continuous density evaluator over a voxel grid.

    ``bandwidth_h`` is in world units; build with :func:`make_kde_field`
    to convert from the normalized bandwidth convention.
    """

    grid: VoxelGrid
    bandwidth_h: float
    cutoff_sigmas: float | None = None   # opt-in truncation radius, in h units

    def __post_init__(self):
        if not self.bandwidth_h > 0:
            raise ContractError("bandwidth must be positive")
        # cache per-axis centroid coordinates for the separable fast path
        g = self.grid
        axes = tuple(
            g.aabb_min[k] + (np.arange(g.resolution[k]) + 0.5) * g.cell_size[k]
            for k in range(3)
        )
        object.__setattr__(self, "_axis_centroids", axes)


def normalized_to_world_bandwidth(grid: VoxelGrid, h_normalized: float) -> float:
    longest = float(np.max(grid.aabb_max - grid.aabb_min))
    return h_normalized * longest / NORMALIZED_EDGE


def make_kde_field(grid: VoxelGrid, bandwidth=DEFAULT_BANDWIDTH,
                   cutoff_sigmas=None) -> KdeField:
    """KdeField from a grid and a bandwidth in normalized (edge=100) units."""
    return KdeField(grid=grid,
                    bandwidth_h=normalized_to_world_bandwidth(grid, bandwidth),
                    cutoff_sigmas=cutoff_sigmas)


def kde_eval(field: KdeField, x) -> float:
    """Exact kernel sum over every cell at a single query point."""
    return float(kde_eval_batch(field, np.asarray(x, dtype=np.float64)[None, :])[0])


def kde_eval_batch(field: KdeField, xs) -> np.ndarray:
    """Vectorized kde_eval over a batch of query points, shape (M,).

    The regular grid makes the Gaussian kernel separable per axis, so the
    exact sum over all cells reduces to three tensor contractions (the
    first a plain matmul).  With a radial truncation enabled the slower
    pairwise path is used instead.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.size == 0:
        return np.zeros(0)
    h = field.bandwidth_h
    norm = (2.0 * np.pi * h * h) ** -1.5
    scale = norm / field.grid.num_cells
    if field.cutoff_sigmas is not None:
        return _kde_eval_truncated(field, xs) * scale
    cx, cy, cz = field._axis_centroids
    inv2h2 = 0.5 / (h * h)
    kx = np.exp(-inv2h2 * (xs[:, 0:1] - cx[None, :]) ** 2)   # (Q, nx)
    ky = np.exp(-inv2h2 * (xs[:, 1:2] - cy[None, :]) ** 2)
    kz = np.exp(-inv2h2 * (xs[:, 2:3] - cz[None, :]) ** 2)
    rho = field.grid.densities
    nx, ny, nz = rho.shape
    tmp = (rho.reshape(nx * ny, nz) @ kz.T).reshape(nx, ny, -1)  # (nx, ny, Q)
    tmp = np.einsum("xyq,qy->xq", tmp, ky)
    return np.einsum("xq,qx->q", tmp, kx) * scale


def _kde_eval_truncated(field: KdeField, xs) -> np.ndarray:
    h = field.bandwidth_h
    c = field.grid.centroids()
    rho = field.grid.densities.ravel()
    cut2 = (field.cutoff_sigmas * h) ** 2
    out = np.empty(xs.shape[0])
    chunk = max(1, int(4e7 // max(c.shape[0], 1)))
    for s in range(0, xs.shape[0], chunk):
        d2 = ((xs[s:s + chunk, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        w = np.exp(-0.5 * d2 / (h * h))
        w[d2 > cut2] = 0.0
        out[s:s + chunk] = w @ rho
    return out


# ---------------------------------------------------------------------------
# Debug dump: 64-byte header (min 3xf64, max 3xf64, resolution 3xu32, 4 pad
# bytes) followed by the flat float64 density array in C order.

def dump_grid(grid: VoxelGrid, path) -> None:
    header = struct.pack(
        "<3d3d3I4x", *grid.aabb_min, *grid.aabb_max, *grid.resolution
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(grid.densities, dtype="<f8").tobytes())


def load_grid_dump(path) -> VoxelGrid:
    with open(path, "rb") as f:
        header = f.read(64)
        vals = struct.unpack("<3d3d3I4x", header)
        lo = np.array(vals[0:3])
        hi = np.array(vals[3:6])
        res = tuple(vals[6:9])
        dens = np.frombuffer(f.read(), dtype="<f8").reshape(res).copy()
    return VoxelGrid(aabb_min=lo, aabb_max=hi, resolution=res, densities=dens)
