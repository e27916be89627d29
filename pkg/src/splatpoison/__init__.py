"""Density-guided poisoning toolkit for 3D Gaussian splatting scenes."""

from .camera import Camera, Ray, load_cameras, ray_through_pixel, save_cameras
from .density_field import (
    KdeField,
    VoxelGrid,
    compute_aabb,
    kde_eval,
    kde_eval_batch,
    make_kde_field,
    voxelize,
)
from .errors import ContractError, FormatError
from .eval_protocol import (
    AttackReport,
    ViewDifficulty,
    evaluate_attack,
    psnr,
    rank_views,
    ssim,
    view_density,
)
from .gaussian_model import (
    SH_C0,
    GaussianCloud,
    covariance_of,
    covariances,
    load_ply,
    write_ply,
)
from .noise_scheduler import (
    NoiseSchedule,
    emit_perturbed_dataset,
    perturb_view,
    sigma_at,
)
from .poison_injector import (
    IllusorySprite,
    InjectionResult,
    PoisonConfig,
    depth_bound,
    inject,
    naive_backproject,
    select_min_density,
)
from .renderer import RenderedImage, render, render_depth

__version__ = "0.1.0"
