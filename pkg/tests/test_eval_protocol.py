import numpy as np
import pytest

from splatpoison.camera import Camera
from splatpoison.density_field import KdeField, VoxelGrid
from splatpoison.errors import ContractError
from splatpoison.eval_protocol import (
    PSNR_CAP_DB,
    RENDER_FIDELITY_BASELINE_DB,
    AttackReport,
    evaluate_attack,
    psnr,
    rank_views,
    ssim,
    view_density,
)


# ---------------------------------------------------------------------------
# PSNR

def test_psnr_hand_computed():
    a = np.zeros((4, 4, 3))
    b = np.full((4, 4, 3), 0.1)
    # MSE = 0.01 -> exactly 20 dB
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_identical_caps():
    a = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    assert psnr(a, a) == PSNR_CAP_DB
    assert psnr(a, a + 1e-8) == PSNR_CAP_DB


def test_psnr_symmetry_and_monotonicity(rng):
    a = rng.uniform(0, 1, (16, 16, 3))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    c = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert psnr(a, b) == psnr(b, a)
    assert psnr(a, b) > psnr(a, c)


def test_psnr_mask_isolates_region(rng):
    a = rng.uniform(0, 1, (10, 10, 3))
    b = a.copy()
    b[:5] = 0.0                    # corrupt the top half only
    mask = np.zeros((10, 10), dtype=bool)
    mask[5:] = True
    assert psnr(a, b, mask=mask) == PSNR_CAP_DB
    assert psnr(a, b) < 20.0


def test_psnr_shape_and_mask_errors(rng):
    a = rng.uniform(0, 1, (8, 8, 3))
    with pytest.raises(ContractError):
        psnr(a, a[:4])
    with pytest.raises(ContractError):
        psnr(a, a, mask=np.zeros((8, 8), dtype=bool))


# ---------------------------------------------------------------------------
# SSIM

def test_ssim_identity(rng):
    a = rng.uniform(0, 1, (32, 32, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_constant_offset_closed_form():
    # flat images: variance terms vanish, SSIM reduces to the luminance term
    a = np.full((32, 32), 0.4)
    b = np.full((32, 32), 0.6)
    c1 = 0.01 ** 2
    expected = (2 * 0.4 * 0.6 + c1) / (0.4**2 + 0.6**2 + c1)
    assert ssim(a, b) == pytest.approx(expected, rel=1e-9)


def test_ssim_anticorrelated_checkerboard():
    yy, xx = np.mgrid[0:32, 0:32]
    a = ((yy + xx) % 2).astype(np.float64)
    b = 1.0 - a
    assert ssim(a, b) < 0.0
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_bounded_and_symmetric(rng):
    a = rng.uniform(0, 1, (24, 24, 3))
    b = rng.uniform(0, 1, (24, 24, 3))
    v = ssim(a, b)
    assert -1.0 <= v <= 1.0
    assert v == pytest.approx(ssim(b, a), abs=1e-12)
    assert ssim(a, b) < ssim(a, np.clip(a + 0.01, 0, 1))


def test_ssim_too_small_rejected():
    a = np.zeros((8, 8))
    with pytest.raises(ContractError):
        ssim(a, a)


def test_ssim_mask_must_hit_valid_region(rng):
    a = rng.uniform(0, 1, (32, 32))
    mask = np.zeros((32, 32), dtype=bool)
    mask[0, 0] = True   # inside the border crop
    with pytest.raises(ContractError):
        ssim(a, a, mask=mask)
    mask[16, 16] = True
    assert ssim(a, a, mask=mask) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# View difficulty

def _cam_at(eye, size=100, f=90.0):
    pose = np.eye(4)
    pose[:3, 3] = eye
    return Camera(width=size, height=size, fx=f, fy=f, cx=size / 2.0,
                  cy=size / 2.0, camera_to_world=pose)


def _field_with_blob(where=None):
    dens = np.zeros((8, 8, 8))
    if where is not None:
        dens[where] = 10.0
    grid = VoxelGrid(aabb_min=np.full(3, -10.0), aabb_max=np.full(3, 10.0),
                     resolution=(8, 8, 8), densities=dens)
    return KdeField(grid=grid, bandwidth_h=2.0)


def test_view_density_empty_field_zero():
    fld = _field_with_blob(None)
    assert view_density(fld, _cam_at((0, 0, 0)), 20.0) == 0.0


def test_view_density_cluster_beats_void():
    # blob just in front of camera A (+z), nothing in front of camera B
    fld = _field_with_blob((4, 4, 4))    # cell centered near (1.25,1.25,1.25)
    near = view_density(fld, _cam_at((1.25, 1.25, 0.3)), 20.0)
    far = view_density(fld, _cam_at((-8.0, -8.0, 0.3)), 20.0)
    assert near > 10 * max(far, 1e-30)


def test_view_density_resolution_invariant():
    fld = _field_with_blob((4, 4, 4))
    lo = view_density(fld, _cam_at((1.0, 1.0, 0.0), size=100, f=90.0), 20.0)
    hi = view_density(fld, _cam_at((1.0, 1.0, 0.0), size=400, f=360.0), 20.0)
    assert lo == pytest.approx(hi, rel=1e-12)


def test_rank_views_orders_and_labels():
    fld = _field_with_blob((4, 4, 4))
    cams = [(_cam_at((1.25, 1.25, 0.3)), "busy"),
            (_cam_at((-6.0, 0.0, 0.0)), "mid"),
            (_cam_at((-9.0, -9.0, -9.0)), "void")]
    ranked = rank_views(fld, cams)
    assert [r.view_id for r in ranked] == ["void", "mid", "busy"]
    assert [r.difficulty for r in ranked] == ["Easy", "Median", "Hard"]
    assert ranked[0].score <= ranked[1].score <= ranked[2].score


def test_rank_views_tie_breaks_by_id():
    fld = _field_with_blob(None)   # all scores zero
    cams = [(_cam_at((0, 0, 0)), "c"), (_cam_at((1, 0, 0)), "a"),
            (_cam_at((2, 0, 0)), "b")]
    ranked = rank_views(fld, cams)
    assert [r.view_id for r in ranked] == ["a", "b", "c"]


def test_rank_views_needs_three():
    fld = _field_with_blob(None)
    with pytest.raises(ContractError):
        rank_views(fld, [(_cam_at((0, 0, 0)), "a"), (_cam_at((1, 0, 0)), "b")])


def test_rank_views_scale_invariance():
    # scaling all densities by a constant cannot change the ordering
    dens = np.random.default_rng(5).uniform(0, 1, (8, 8, 8))
    grid1 = VoxelGrid(aabb_min=np.full(3, -10.0), aabb_max=np.full(3, 10.0),
                      resolution=(8, 8, 8), densities=dens)
    grid2 = VoxelGrid(aabb_min=np.full(3, -10.0), aabb_max=np.full(3, 10.0),
                      resolution=(8, 8, 8), densities=dens * 37.0)
    cams = [(_cam_at((x, 0.0, 0.0)), f"v{k}")
            for k, x in enumerate((-6.0, 0.0, 5.0, 2.0))]
    r1 = rank_views(KdeField(grid=grid1, bandwidth_h=2.0), cams)
    r2 = rank_views(KdeField(grid=grid2, bandwidth_h=2.0), cams)
    assert [r.view_id for r in r1] == [r.view_id for r in r2]


# ---------------------------------------------------------------------------
# evaluate_attack

def _images(rng, n=1):
    return rng.uniform(0, 1, (32, 32, 3))


def _setup(rng, ill_noise=0.0, test_noise=0.0):
    clean = {"p": _images(rng), "t": _images(rng)}
    target = {"p": np.clip(clean["p"] + 0.3, 0, 1)}
    mask = np.zeros((32, 32), dtype=bool)
    mask[8:24, 8:24] = True
    poisoned = {
        "p": np.clip(target["p"] + rng.normal(0, ill_noise, (32, 32, 3)), 0, 1)
        if ill_noise else target["p"].copy(),
        "t": np.clip(clean["t"] + rng.normal(0, test_noise, (32, 32, 3)), 0, 1)
        if test_noise else clean["t"].copy(),
    }
    return clean, poisoned, target, {"p": mask}


def test_evaluate_perfect_attack(rng):
    clean, poisoned, target, masks = _setup(rng)
    rep = evaluate_attack(clean, poisoned, target, masks, ["p"], ["t"])
    assert rep.v_illusory_psnr == PSNR_CAP_DB
    assert rep.v_test_psnr == PSNR_CAP_DB
    assert rep.v_test_drop_db == 0.0
    assert rep.v_test_clean_baseline_psnr == RENDER_FIDELITY_BASELINE_DB
    assert rep.success is True


def test_evaluate_bad_illusion_fails(rng):
    clean, poisoned, target, masks = _setup(rng, ill_noise=0.3)
    rep = evaluate_attack(clean, poisoned, target, masks, ["p"], ["t"])
    assert rep.v_illusory_psnr < 25.0
    assert rep.success is False


def test_evaluate_collateral_damage_fails(rng):
    clean, poisoned, target, masks = _setup(rng, test_noise=0.25)
    rep = evaluate_attack(clean, poisoned, target, masks, ["p"], ["t"])
    assert rep.v_test_drop_db > 3.0
    assert rep.success is False


def test_evaluate_external_gt_baseline(rng):
    clean, poisoned, target, masks = _setup(rng)
    gt = {"t": np.clip(clean["t"] + rng.normal(0, 0.02, (32, 32, 3)), 0, 1)}
    rep = evaluate_attack(clean, poisoned, target, masks, ["p"], ["t"],
                          gt_images=gt)
    # with external GT the baseline is the clean render's own PSNR
    assert rep.v_test_clean_baseline_psnr == pytest.approx(
        psnr(clean["t"], gt["t"]))
    assert rep.v_test_drop_db == pytest.approx(0.0, abs=1e-9)


def test_evaluate_missing_view_rejected(rng):
    clean, poisoned, target, masks = _setup(rng)
    with pytest.raises(ContractError, match="ghost"):
        evaluate_attack(clean, poisoned, target, masks, ["p"], ["t", "ghost"])


def test_report_serialization(rng):
    clean, poisoned, target, masks = _setup(rng)
    rep = evaluate_attack(clean, poisoned, target, masks, ["p"], ["t"])
    d = rep.to_dict()
    assert d["v_illusory"]["lpips"] is None
    assert d["success"] is True
    table = rep.to_table()
    assert "V-Illusory" in table and "V-Test" in table
    assert isinstance(rep, AttackReport)
