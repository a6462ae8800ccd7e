"""Lift-splat scatter, BEV finalization, and the point-side BEV head."""

import numpy as np
import pytest

from pcdistill import autodiff as ad
from pcdistill.autodiff import Tensor, finite_difference_check
from pcdistill.bev import (
    BevGridConfig,
    PointBevHead,
    finalize_bev,
    lift_splat,
    lift_splat_accumulate,
    nonzero_grid_indices,
)
from pcdistill.encoders import DepthHead, DepthHeadConfig, VoxelGridConfig
from pcdistill.geometry import CameraIntrinsics, DepthBinning, RigidTransform, bin_centers, lift_pixels

GRID = BevGridConfig(x_range=(-8.0, 8.0), y_range=(-8.0, 8.0), rows=8, cols=8, channels=3)
BINNING = DepthBinning(d_min=1.0, d_max=7.0, t=6)
IDENTITY = RigidTransform.identity()


def tiny_intrinsics(w=4, h=3):
    return CameraIntrinsics(fx=3.0, fy=3.0, cx=(w - 1) / 2, cy=(h - 1) / 2, width=w, height=h)


class OneHotDepth:
    """Depth distribution that puts all mass in one bin per pixel."""

    def __init__(self, h, w, t, bin_idx):
        probs = np.zeros((h, w, t))
        probs[:, :, bin_idx] = 1.0
        self.probs = Tensor(probs)


def test_grid_cell_lookup():
    idx = GRID.cell_of(np.array([[-8.0, -8.0], [7.9, 7.9], [0.0, 0.0], [9.0, 0.0]]))
    assert idx[0] == 0
    assert idx[1] == 63
    assert idx[2] == 4 * 8 + 4
    assert idx[3] == -1  # outside the grid


def test_grid_requires_square_cells():
    with pytest.raises(ValueError):
        BevGridConfig(x_range=(0.0, 8.0), y_range=(0.0, 4.0), rows=8, cols=8)


def test_cell_centers_row_major():
    centers = GRID.cell_centers()
    assert centers.shape == (64, 2)
    np.testing.assert_allclose(centers[0], [-7.0, -7.0])
    np.testing.assert_allclose(centers[1], [-7.0, -5.0])  # second column, same row
    np.testing.assert_allclose(centers[8], [-5.0, -7.0])  # next row


def test_one_hot_depth_lands_feature_in_predicted_cell():
    k = tiny_intrinsics()
    h, w = k.height, k.width
    feats = np.zeros((h, w, 3))
    feats[1, 2] = [5.0, 0.0, 0.0]
    bin_idx = 2
    depth = OneHotDepth(h, w, BINNING.t, bin_idx)
    acc, mass = lift_splat_accumulate(Tensor(feats), depth, k, IDENTITY, GRID, BINNING)
    world = lift_pixels(
        np.array([2.0]), np.array([1.0]), np.array([bin_centers(BINNING)[bin_idx]]), k, IDENTITY
    )
    cell = GRID.cell_of(world[:, :2])[0]
    i, j = divmod(int(cell), GRID.cols)
    np.testing.assert_allclose(acc.data[i, j], [5.0, 0.0, 0.0])
    assert mass[i, j] > 0.0
    # total scattered feature mass equals the contribution of that one pixel
    assert acc.data.sum() == pytest.approx(5.0)


@pytest.mark.parametrize("seed", range(5))
def test_lift_splat_matches_triple_loop(seed):
    """Brute-force oracle: loop pixels x bins x channels explicitly."""
    rng = np.random.default_rng(seed)
    k = tiny_intrinsics(w=5, h=4)
    h, w, c = 4, 5, 3
    feats = rng.standard_normal((h, w, c))
    probs = rng.random((h, w, BINNING.t))
    probs /= probs.sum(axis=2, keepdims=True)

    class Dist:
        def __init__(self, p):
            self.probs = Tensor(p)

    ext = RigidTransform.rotation_z(rng.uniform(-np.pi, np.pi))
    acc, mass = lift_splat_accumulate(Tensor(feats), Dist(probs), k, ext, GRID, BINNING)

    expected = np.zeros((GRID.rows, GRID.cols, c))
    expected_mass = np.zeros((GRID.rows, GRID.cols))
    centers = bin_centers(BINNING)
    for v in range(h):
        for u in range(w):
            for t in range(BINNING.t):
                world = lift_pixels(
                    np.array([float(u)]), np.array([float(v)]), np.array([centers[t]]), k, ext
                )
                cell = GRID.cell_of(world[:, :2])[0]
                if cell < 0:
                    continue
                i, j = divmod(int(cell), GRID.cols)
                expected[i, j] += probs[v, u, t] * feats[v, u]
                expected_mass[i, j] += probs[v, u, t] * np.abs(feats[v, u]).sum()
    np.testing.assert_allclose(acc.data, expected, atol=1e-12)
    np.testing.assert_allclose(mass, expected_mass, atol=1e-12)


def test_lift_splat_hflip_mirrors_columns():
    k = tiny_intrinsics()
    h, w = k.height, k.width
    feats = np.zeros((h, w, 3))
    feats[1, 0] = [1.0, 0.0, 0.0]
    depth = OneHotDepth(h, w, BINNING.t, 3)
    acc_flip, _ = lift_splat_accumulate(Tensor(feats), depth, k, IDENTITY, GRID, BINNING, hflip=True)

    # flipping the geometry equals moving the feature to the mirrored column
    feats_mirror = np.zeros((h, w, 3))
    feats_mirror[1, w - 1] = [1.0, 0.0, 0.0]
    acc_ref, _ = lift_splat_accumulate(Tensor(feats_mirror), depth, k, IDENTITY, GRID, BINNING)
    np.testing.assert_allclose(acc_flip.data, acc_ref.data, atol=1e-12)


def test_finalize_bev_unit_norm_and_empty_mask():
    acc = Tensor(np.zeros((2, 2, 3)))
    acc.data[0, 0] = [3.0, 4.0, 0.0]
    mass = np.zeros((2, 2))
    mass[0, 0] = 1.0
    bev = finalize_bev(acc, mass, BevGridConfig(x_range=(0, 2), y_range=(0, 2), rows=2, cols=2, channels=3))
    np.testing.assert_allclose(bev.features.data[0, 0], [0.6, 0.8, 0.0])
    assert bev.mask[0, 0]
    assert not bev.mask[1, 1]
    np.testing.assert_allclose(bev.features.data[1, 1], 0.0)


def test_zero_features_give_empty_mask():
    k = tiny_intrinsics()
    depth = OneHotDepth(k.height, k.width, BINNING.t, 1)
    bev = lift_splat(Tensor(np.zeros((k.height, k.width, 3))), depth, k, IDENTITY, GRID, BINNING)
    assert not bev.mask.any()
    assert nonzero_grid_indices(bev) == []


@pytest.mark.parametrize("seed", range(3))
def test_lift_splat_gradients(seed):
    rng = np.random.default_rng(seed)
    k = tiny_intrinsics()
    h, w, c = k.height, k.width, 3
    feats = Tensor(rng.standard_normal((h, w, c)), requires_grad=True)
    logits = Tensor(rng.standard_normal((h, w, BINNING.t)), requires_grad=True)
    target = Tensor(rng.random((GRID.rows, GRID.cols, c)))

    class Dist:
        def __init__(self, p):
            self.probs = p

    def fn(feats, logits):
        acc, _ = lift_splat_accumulate(
            feats, Dist(ad.softmax(logits, axis=2)), k, IDENTITY, GRID, BINNING
        )
        return ad.tsum(ad.mul(acc, target))

    assert finite_difference_check(fn, [feats, logits]) < 1e-4


def test_gradient_through_depth_head_and_lift():
    rng = np.random.default_rng(0)
    k = tiny_intrinsics()
    head = DepthHead(DepthHeadConfig(cam_hidden=4, cam_bottleneck=3, block_width=4, num_blocks=1),
                     in_channels=3, num_bins=BINNING.t, seed=0)
    feats = Tensor(rng.standard_normal((k.height, k.width, 3)), requires_grad=True)
    target = Tensor(rng.random((GRID.rows, GRID.cols, 3)))

    def fn(feats, w1):
        acc, _ = lift_splat_accumulate(feats, head.forward(feats, k), k, IDENTITY, GRID, BINNING)
        return ad.tsum(ad.mul(acc, target))

    assert finite_difference_check(fn, [feats, head.params["block0/w1"]]) < 1e-4


VOXEL_GRID = VoxelGridConfig(
    x_range=(-8.0, 8.0), y_range=(-8.0, 8.0), z_range=(-2.0, 2.0), voxel_size=(2.0, 2.0, 1.0)
)


def test_point_bev_head_masks_empty_columns():
    head = PointBevHead(GRID, VOXEL_GRID.dims, voxel_channels=2, seed=0)
    nx, ny, nz = VOXEL_GRID.dims
    voxels = Tensor(np.random.default_rng(0).standard_normal((nx, ny, nz, 2)))
    occ = np.zeros((nx, ny, nz), dtype=bool)
    occ[2, 3, 1] = True
    bev = head.forward(voxels, occ)
    assert bev.features.shape == (8, 8, GRID.channels)
    assert bev.mask[2, 3]
    assert bev.mask.sum() == 1
    empty = ~bev.mask
    np.testing.assert_allclose(bev.features.data[empty], 0.0)
    # occupied cell is unit norm
    assert np.linalg.norm(bev.features.data[2, 3]) == pytest.approx(1.0)


def test_point_bev_head_footprint_validation():
    with pytest.raises(ValueError):
        PointBevHead(GRID, (4, 4, 2), voxel_channels=2, seed=0)


def test_point_bev_head_gradients():
    head = PointBevHead(
        BevGridConfig(x_range=(-4, 4), y_range=(-4, 4), rows=4, cols=4, channels=3),
        (4, 4, 2),
        voxel_channels=2,
        seed=1,
    )
    rng = np.random.default_rng(2)
    voxels = Tensor(rng.standard_normal((4, 4, 2, 2)), requires_grad=True)
    occ = rng.random((4, 4, 2)) > 0.4
    target = Tensor(rng.random((4, 4, 3)))

    def fn(voxels, w0):
        return ad.tsum(ad.mul(head.forward(voxels, occ).features, target))

    assert finite_difference_check(fn, [voxels, head.params["conv0/w"]]) < 1e-4


def test_multi_view_sum_then_normalize():
    # two views accumulate before the single normalization pass
    k = tiny_intrinsics()
    h, w = k.height, k.width
    rng = np.random.default_rng(5)
    feats_a = Tensor(rng.random((h, w, 3)))
    feats_b = Tensor(rng.random((h, w, 3)))
    depth = OneHotDepth(h, w, BINNING.t, 2)
    acc_a, mass_a = lift_splat_accumulate(feats_a, depth, k, IDENTITY, GRID, BINNING)
    acc_b, mass_b = lift_splat_accumulate(feats_b, depth, k, IDENTITY, GRID, BINNING)
    merged = finalize_bev(ad.add(acc_a, acc_b), mass_a + mass_b, GRID)
    joint = acc_a.data + acc_b.data
    occupied = merged.mask
    norms = np.linalg.norm(joint[occupied], axis=1, keepdims=True)
    np.testing.assert_allclose(merged.features.data[occupied], joint[occupied] / norms, atol=1e-12)
