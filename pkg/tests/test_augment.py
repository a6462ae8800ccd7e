"""Replayable augmentations and their geometric inverses."""

import numpy as np
import pytest

from pcdistill.autodiff import Tensor
from pcdistill.augment import (
    AugmentConfig,
    AugmentRecord,
    adjust_intrinsics,
    augment_image,
    augment_points,
    flip_u,
    invert_for_bev,
    invert_points,
    project_into_patch,
    replay_image,
    replay_points,
    transform_points,
    transform_xy,
)
from pcdistill.bev import BevFeatureMap, BevGridConfig
from pcdistill.geometry import CameraIntrinsics, PointCloud, RigidTransform, project_point_arrays

K = CameraIntrinsics(fx=40.0, fy=40.0, cx=15.5, cy=11.5, width=32, height=24)
IDENTITY = RigidTransform.identity()


def cloud(seed=0, n=200):
    rng = np.random.default_rng(seed)
    pts = np.stack(
        [rng.uniform(-10, 10, n), rng.uniform(-10, 10, n), rng.uniform(-2, 4, n)], axis=1
    )
    return PointCloud(pts, labels=rng.integers(0, 4, n))


@pytest.mark.parametrize("seed", range(8))
def test_point_replay_is_bit_identical(seed):
    c = cloud()
    out1, record = augment_points(c, seed)
    out2 = replay_points(c, record)
    assert out1.points.tobytes() == out2.points.tobytes()
    np.testing.assert_array_equal(out1.labels, out2.labels)


@pytest.mark.parametrize("seed", range(8))
def test_point_transform_round_trip(seed):
    c = cloud(seed)
    _, record = augment_points(c, seed)
    moved = transform_points(record, c.points)
    back = invert_points(record, moved)
    np.testing.assert_allclose(back, c.points, atol=1e-10)


def test_dropout_removes_a_contiguous_cuboid():
    c = cloud(1, n=2000)
    out, record = augment_points(c, 3, AugmentConfig(drop_prob=1.0))
    assert record.drop_bounds is not None
    assert len(out) < 2000 or record.kept_indices.size == 2000
    moved = transform_points(record, c.points)
    lo, hi = record.drop_bounds[:, 0], record.drop_bounds[:, 1]
    inside = ((moved >= lo) & (moved <= hi)).all(axis=1)
    # kept indices are exactly the complement of the cuboid
    np.testing.assert_array_equal(record.kept_indices, np.nonzero(~inside)[0])


def test_no_dropout_keeps_all_points():
    c = cloud(2)
    out, record = augment_points(c, 0, AugmentConfig(drop_prob=0.0))
    assert len(out) == len(c)
    np.testing.assert_array_equal(record.kept_indices, np.arange(len(c)))


def test_labels_follow_surviving_points():
    c = cloud(3)
    out, record = augment_points(c, 5)
    np.testing.assert_array_equal(out.labels, c.labels[record.kept_indices])


def test_transform_xy_matches_3d_transform():
    _, record = augment_points(cloud(4), 7)
    xy = np.array([[1.0, 2.0], [-3.0, 0.5]])
    full = transform_points(record, np.column_stack([xy, np.zeros(2)]))
    np.testing.assert_allclose(transform_xy(record, xy), full[:, :2], atol=1e-12)


@pytest.mark.parametrize("seed", range(8))
def test_image_replay_is_bit_identical(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((24, 32, 3))
    out1, record = augment_image(img, seed)
    out2 = replay_image(img, record)
    assert out1.tobytes() == out2.tobytes()
    assert out1.shape == img.shape  # default out_size preserves shape


def test_identity_image_augment_is_exact():
    rng = np.random.default_rng(0)
    img = rng.random((10, 12, 3))
    cfg = AugmentConfig(crop_scale_range=(1.0, 1.0), image_flip_prob=0.0)
    out, record = augment_image(img, 0, cfg)
    np.testing.assert_array_equal(out, img)
    assert record.crop == (0, 0, 10, 12)
    assert not record.hflip


def test_hflip_mirrors_columns():
    rng = np.random.default_rng(1)
    img = rng.random((6, 8, 3))
    record = AugmentRecord(crop=(0, 0, 6, 8), out_size=(6, 8), hflip=True)
    out = replay_image(img, record)
    np.testing.assert_array_equal(out, img[:, ::-1])


def test_adjust_intrinsics_crop_only():
    record = AugmentRecord(crop=(2, 4, 20, 24), out_size=(20, 24))
    k2 = adjust_intrinsics(record, K)
    # pure crop shifts the principal point by the crop origin
    assert k2.fx == pytest.approx(K.fx)
    assert k2.cx == pytest.approx(K.cx - 4)
    assert k2.cy == pytest.approx(K.cy - 2)
    assert (k2.width, k2.height) == (24, 20)


def test_adjust_intrinsics_resize_preserves_pixel_centers():
    # upscaling 2x: source pixel center u maps to 2u + 0.5 in the patch
    record = AugmentRecord(crop=(0, 0, 24, 32), out_size=(48, 64))
    k2 = adjust_intrinsics(record, K)
    pts = np.array([[0.5, -0.3, 10.0], [2.0, 1.0, 30.0]])
    _, u0, v0, _ = project_point_arrays(pts, IDENTITY, K)
    _, u1, v1, _ = project_point_arrays(pts, IDENTITY, k2)
    np.testing.assert_allclose(u1, 2 * u0 + 0.5, atol=1e-9)
    np.testing.assert_allclose(v1, 2 * v0 + 0.5, atol=1e-9)


def test_flip_u_involution():
    record = AugmentRecord(crop=(0, 0, 4, 6), out_size=(4, 6), hflip=True)
    u = np.array([0.0, 2.5, 5.0])
    np.testing.assert_allclose(flip_u(record, flip_u(record, u)), u)
    np.testing.assert_allclose(flip_u(record, u), [5.0, 2.5, 0.0])


@pytest.mark.parametrize("seed", range(6))
def test_project_into_patch_consistent_with_pixel_lookup(seed):
    """Projecting through adjusted intrinsics must agree with projecting
    into the original image and applying the crop/resize mapping."""
    rng = np.random.default_rng(seed)
    pts = np.stack(
        [rng.uniform(-4, 4, 120), rng.uniform(-3, 3, 120), rng.uniform(3.0, 40.0, 120)], axis=1
    )
    img = rng.random((24, 32, 3))
    patch, record = augment_image(img, seed)
    idx, u, v, z = project_into_patch(pts, IDENTITY, K, record)
    r0, c0, ch, cw = record.crop
    out_h, out_w = record.out_size
    sx, sy = out_w / cw, out_h / ch
    idx0, u0, v0, z0 = project_point_arrays(pts, IDENTITY, K)
    mapping = {i: (uu, vv) for i, uu, vv in zip(idx0, u0, v0)}
    for i, uu, vv in zip(idx, u, v):
        ou, ov = mapping[i]
        expected_u = (ou - c0 + 0.5) * sx - 0.5
        if record.hflip:
            expected_u = (out_w - 1) - expected_u
        expected_v = (ov - r0 + 0.5) * sy - 0.5
        assert abs(uu - expected_u) < 1e-9
        assert abs(vv - expected_v) < 1e-9


GRID = BevGridConfig(x_range=(-8.0, 8.0), y_range=(-8.0, 8.0), rows=8, cols=8, channels=2)


def test_invert_for_bev_pure_flip():
    # flip over x: cell content moves to the mirrored row
    feats = np.zeros((8, 8, 2))
    feats[1, 2] = [1.0, 0.0]
    mask = np.zeros((8, 8), bool)
    mask[1, 2] = True
    record = AugmentRecord(flip_x=True)
    out = invert_for_bev(record, BevFeatureMap(Tensor(feats), mask, GRID))
    # original-frame cell (i, j) sources from flipped row (7 - i)
    assert out.mask[6, 2]
    np.testing.assert_allclose(out.features.data[6, 2], [1.0, 0.0])
    assert out.mask.sum() == 1


def test_invert_for_bev_quarter_rotation():
    feats = np.zeros((8, 8, 2))
    mask = np.zeros((8, 8), bool)
    # augmented-frame cell center (2.5 - 8 + ... ) -> use explicit center
    feats[6, 5] = [0.0, 1.0]
    mask[6, 5] = True
    record = AugmentRecord(rotation=np.pi / 2)
    out = invert_for_bev(record, BevFeatureMap(Tensor(feats), mask, GRID))
    # rotating original centers by +90 deg: (x, y) -> (-y, x); the original
    # cell whose rotated center lands in (6, 5) is the one that lights up
    centers = GRID.cell_centers()
    rotated = transform_xy(record, centers)
    idx = GRID.cell_of(rotated)
    src = np.nonzero(idx == 6 * 8 + 5)[0]
    assert src.size == 1
    i, j = divmod(int(src[0]), 8)
    assert out.mask[i, j]
    np.testing.assert_allclose(out.features.data[i, j], [0.0, 1.0])


def test_invert_for_bev_out_of_grid_is_masked_zero():
    feats = np.random.default_rng(0).random((8, 8, 2))
    mask = np.ones((8, 8), bool)
    record = AugmentRecord(translation=np.array([100.0, 0.0, 0.0]))
    out = invert_for_bev(record, BevFeatureMap(Tensor(feats), mask, GRID))
    assert not out.mask.any()
    np.testing.assert_allclose(out.features.data, 0.0)


def test_invert_for_bev_identity_record():
    rng = np.random.default_rng(2)
    feats = rng.random((8, 8, 2))
    mask = rng.random((8, 8)) > 0.5
    out = invert_for_bev(AugmentRecord(), BevFeatureMap(Tensor(feats), mask, GRID))
    np.testing.assert_allclose(out.features.data, feats, atol=1e-12)
    np.testing.assert_array_equal(out.mask, mask)


def test_invert_for_bev_is_differentiable():
    feats = Tensor(np.random.default_rng(3).random((8, 8, 2)), requires_grad=True)
    mask = np.ones((8, 8), bool)
    record = AugmentRecord(rotation=0.3, scale=1.02)
    out = invert_for_bev(record, BevFeatureMap(feats, mask, GRID))
    from pcdistill import autodiff as ad

    ad.tsum(out.features).backward()
    assert feats.grad is not None
    assert feats.grad.sum() > 0


@pytest.mark.parametrize("seed", range(4))
def test_augment_is_deterministic_per_seed(seed):
    c = cloud(9)
    a1, r1 = augment_points(c, seed)
    a2, r2 = augment_points(c, seed)
    assert a1.points.tobytes() == a2.points.tobytes()
    assert r1.rotation == r2.rotation
    img = np.random.default_rng(0).random((12, 16, 3))
    p1, _ = augment_image(img, seed)
    p2, _ = augment_image(img, seed)
    assert p1.tobytes() == p2.tobytes()
