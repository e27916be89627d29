import numpy as np
import pytest

from splatpoison.camera import Ray
from splatpoison.density_field import (
    KdeField,
    VoxelGrid,
    make_kde_field,
    voxelize,
)
from splatpoison.errors import ContractError
from splatpoison.fixtures import SceneSpec, make_scene, make_sprite
from splatpoison.gaussian_model import sigmoid
from splatpoison.poison_injector import (
    IllusorySprite,
    InjectionResult,
    PoisonConfig,
    depth_bound,
    inject,
    naive_backproject,
    select_min_density,
)
from splatpoison.renderer import render


def _two_bump_field():
    """High density near z in [0, 2], low valley around z = 6, high again
    near z = 10 (along +z through the origin)."""
    dens = np.zeros((1, 1, 8))
    dens[0, 0, 0] = 5.0
    dens[0, 0, 7] = 5.0
    grid = VoxelGrid(aabb_min=np.array([-2.0, -2.0, 0.0]),
                     aabb_max=np.array([2.0, 2.0, 12.0]),
                     resolution=(1, 1, 8), densities=dens)
    return KdeField(grid=grid, bandwidth_h=1.5)


def test_select_min_density_finds_valley():
    fld = _two_bump_field()
    ray = Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, 1.0]))
    x, t_star, f_star = select_min_density(fld, ray, 0.3, 11.0, n=200)
    assert 4.5 <= t_star <= 7.5
    np.testing.assert_allclose(x, [0, 0, t_star])
    assert f_star <= 1e-3


def test_select_min_density_matches_dense_scan(rng):
    fld = _two_bump_field()
    from splatpoison.density_field import kde_eval_batch
    for _ in range(20):
        d = rng.normal(size=3)
        d[2] = abs(d[2]) + 0.5
        d /= np.linalg.norm(d)
        ray = Ray(origin=rng.uniform(-1, 1, 3) * [1, 1, 0], direction=d)
        n = int(rng.integers(16, 128))
        _, t_star, f_star = select_min_density(fld, ray, 0.3, 10.0, n=n)
        ts = np.linspace(0.3, 10.0, n)
        fs = kde_eval_batch(fld, ray.at(ts))
        i = int(np.argmin(fs))
        assert t_star == ts[i]
        assert f_star == fs[i]


def test_select_min_density_ties_take_smallest_t():
    # zero-density field: every sample ties, the first must win
    grid = VoxelGrid(aabb_min=np.zeros(3), aabb_max=np.ones(3),
                     resolution=(2, 2, 2), densities=np.zeros((2, 2, 2)))
    fld = KdeField(grid=grid, bandwidth_h=1.0)
    ray = Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, 1.0]))
    _, t_star, _ = select_min_density(fld, ray, 0.3, 5.0, n=16)
    assert t_star == 0.3


def test_select_min_density_bad_range():
    fld = _two_bump_field()
    ray = Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, 1.0]))
    with pytest.raises(ContractError, match=r"pixel \(3, 4\)"):
        select_min_density(fld, ray, 2.0, 1.0, pixel=(3, 4))


# ---------------------------------------------------------------------------
# depth bound

@pytest.fixture(scope="module")
def wall_scene():
    cloud, cams = make_scene(SceneSpec("wall", seed=0,
                                       params={"image_size": 120}))
    cam_p = cams[0][0]
    depth = render(cloud, cam_p).depth
    grid = voxelize(cloud, (16, 16, 16))
    fld = make_kde_field(grid, 7.5)
    return cloud, cam_p, depth, fld


def test_depth_bound_uses_scene_depth(wall_scene):
    cloud, cam_p, depth, fld = wall_scene
    aabb = (fld.grid.aabb_min, fld.grid.aabb_max)
    t = depth_bound(depth, cam_p, (cam_p.cx, cam_p.cy), aabb)
    # central ray is axial, so ray length equals z depth of the slab
    assert 4.7 <= t <= 5.3


def test_depth_bound_fallback_uses_aabb_exit(wall_scene):
    _, cam_p, depth, fld = wall_scene
    aabb = (fld.grid.aabb_min, fld.grid.aabb_max)
    uncovered = np.full_like(depth, np.inf)
    t = depth_bound(uncovered, cam_p, (cam_p.cx, cam_p.cy), aabb)
    # straight down +z: exits the box at aabb_max z; bound is 95% of that
    assert t == pytest.approx(0.95 * float(fld.grid.aabb_max[2]), rel=1e-6)


def test_depth_bound_miss_returns_none(wall_scene):
    _, cam_p, depth, _ = wall_scene
    tiny = (np.array([100.0, 100.0, 100.0]), np.array([101.0, 101.0, 101.0]))
    uncovered = np.full_like(depth, np.inf)
    assert depth_bound(uncovered, cam_p, (1.0, 1.0), tiny) is None


# ---------------------------------------------------------------------------
# inject

def test_inject_single_white_pixel_color(wall_scene):
    cloud, cam_p, depth, fld = wall_scene
    rgba = np.zeros((1, 1, 4), dtype=np.uint8)
    rgba[..., :3] = 255
    rgba[..., 3] = 255
    sprite = IllusorySprite(rgba=rgba, offset=(59.0, 59.0), scale=1.0)
    res = inject(cloud, fld, cam_p, sprite, PoisonConfig(), depth)
    assert res.inserted_count == 1
    added = res.poisoned_cloud
    np.testing.assert_allclose(added.colors_rgb[-1], [1, 1, 1], atol=1e-6)
    assert added.opacities[-1] == pytest.approx(0.99, abs=1e-6)


def test_inject_counts_and_prefix_preserved(wall_scene):
    cloud, cam_p, depth, fld = wall_scene
    sprite = IllusorySprite(rgba=make_sprite(16), offset=(40.0, 40.0),
                            scale=2.0)
    res = inject(cloud, fld, cam_p, sprite, PoisonConfig(), depth)
    assert res.inserted_count == 16 * 16
    assert len(res.poisoned_cloud) == len(cloud) + 256
    np.testing.assert_array_equal(res.poisoned_cloud.raw[:len(cloud)],
                                  cloud.raw)


def test_inject_points_sit_at_ray_argmin(wall_scene):
    from splatpoison.camera import ray_through_pixel
    from splatpoison.density_field import kde_eval_batch
    cloud, cam_p, depth, fld = wall_scene
    sprite = IllusorySprite(rgba=make_sprite(8), offset=(50.0, 50.0), scale=1.0)
    cfg = PoisonConfig()
    res = inject(cloud, fld, cam_p, sprite, cfg, depth)
    aabb = (fld.grid.aabb_min, fld.grid.aabb_max)
    for (r, c), t_star, f_star in res.per_point_log[:10]:
        u, v = sprite.pixel_center_on_image(r, c)
        ray = ray_through_pixel(cam_p, (u, v))
        t_max = depth_bound(depth, cam_p, (u, v), aabb)
        assert cfg.t_min <= t_star <= t_max + 1e-9
        ts = np.linspace(cfg.t_min, t_max, cfg.samples_per_ray)
        fs = kde_eval_batch(fld, ray.at(ts))
        assert f_star == pytest.approx(fs.min(), rel=1e-12)


def test_inject_deterministic(wall_scene):
    cloud, cam_p, depth, fld = wall_scene
    sprite = IllusorySprite(rgba=make_sprite(8), offset=(45.0, 45.0), scale=1.0)
    a = inject(cloud, fld, cam_p, sprite, PoisonConfig(), depth)
    b = inject(cloud, fld, cam_p, sprite, PoisonConfig(), depth)
    np.testing.assert_array_equal(a.poisoned_cloud.raw, b.poisoned_cloud.raw)


def test_inject_stride_reduces_count(wall_scene):
    cloud, cam_p, depth, fld = wall_scene
    sprite = IllusorySprite(rgba=make_sprite(8), offset=(45.0, 45.0), scale=1.0)
    res = inject(cloud, fld, cam_p, sprite, PoisonConfig(pixel_stride=2), depth)
    assert res.inserted_count == 16   # every other row and column of 8x8


def test_inject_empty_mask_rejected(wall_scene):
    cloud, cam_p, depth, fld = wall_scene
    rgba = np.zeros((4, 4, 4), dtype=np.uint8)    # alpha all zero
    sprite = IllusorySprite(rgba=rgba, offset=(10.0, 10.0))
    with pytest.raises(ContractError, match="mask"):
        inject(cloud, fld, cam_p, sprite, PoisonConfig(), depth)


def test_inject_out_of_bounds_footprint_rejected(wall_scene):
    cloud, cam_p, depth, fld = wall_scene
    sprite = IllusorySprite(rgba=make_sprite(16), offset=(115.0, 10.0))
    with pytest.raises(ContractError, match="footprint"):
        inject(cloud, fld, cam_p, sprite, PoisonConfig(), depth)


def test_inject_depth_shape_mismatch_rejected(wall_scene):
    cloud, cam_p, depth, fld = wall_scene
    sprite = IllusorySprite(rgba=make_sprite(4), offset=(10.0, 10.0))
    with pytest.raises(ContractError, match="resolution"):
        inject(cloud, fld, cam_p, sprite, PoisonConfig(), depth[:-1])


def test_poison_config_validation():
    with pytest.raises(ContractError):
        PoisonConfig(t_min=0.0)
    with pytest.raises(ContractError):
        PoisonConfig(samples_per_ray=1)
    with pytest.raises(ContractError):
        PoisonConfig(poison_opacity=1.0)
    with pytest.raises(ContractError):
        PoisonConfig(pixel_stride=0)


def test_naive_backproject_fixed_depth(wall_scene):
    cloud, cam_p, _, _ = wall_scene
    sprite = IllusorySprite(rgba=make_sprite(8), offset=(50.0, 50.0), scale=1.0)
    res = naive_backproject(cloud, cam_p, sprite, fixed_t=4.0)
    assert isinstance(res, InjectionResult)
    assert res.inserted_count == 64
    for _, t_star, _ in res.per_point_log:
        assert t_star == 4.0
    with pytest.raises(ContractError):
        naive_backproject(cloud, cam_p, sprite, fixed_t=0.0)


def test_sprite_mask_threshold():
    rgba = np.zeros((1, 2, 4), dtype=np.uint8)
    rgba[0, 0, 3] = 127    # at threshold: excluded
    rgba[0, 1, 3] = 128    # above: included
    s = IllusorySprite(rgba=rgba)
    np.testing.assert_array_equal(s.mask, [[False, True]])


def test_sprite_pixel_center_mapping():
    s = IllusorySprite(rgba=np.full((2, 2, 4), 255, dtype=np.uint8),
                       offset=(10.0, 20.0), scale=3.0)
    assert s.pixel_center_on_image(0, 0) == (11.5, 21.5)
    assert s.pixel_center_on_image(1, 0) == (11.5, 24.5)
