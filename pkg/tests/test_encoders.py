"""The 2-D teacher, the 3-D student, and the camera-aware depth head."""

import numpy as np
import pytest
from dataclasses import replace

from pcdistill import autodiff as ad
from pcdistill.autodiff import Tensor, finite_difference_check
from pcdistill.encoders import (
    DepthHead,
    DepthHeadConfig,
    Encoder2D,
    Encoder3D,
    EncoderConfig2D,
    EncoderConfig3D,
    VoxelGridConfig,
)
from pcdistill.geometry import CameraIntrinsics

SMALL_2D = EncoderConfig2D(channels=(4, 4), kernels=(3, 3), dilations=(1, 2))
SMALL_GRID = VoxelGridConfig(
    x_range=(-4.0, 4.0), y_range=(-4.0, 4.0), z_range=(-2.0, 2.0), voxel_size=(1.0, 1.0, 1.0)
)
SMALL_3D = EncoderConfig3D(grid=SMALL_GRID, hidden=8, out_channels=4)
K = CameraIntrinsics(fx=30.0, fy=30.0, cx=3.0, cy=2.5, width=7, height=6)


def test_encoder2d_shapes_and_determinism():
    enc = Encoder2D(SMALL_2D, seed=0)
    img = np.random.default_rng(1).random((6, 7, 3))
    out1 = enc.forward(img)
    out2 = Encoder2D(SMALL_2D, seed=0).forward(img)
    assert out1.shape == (6, 7, 4)
    np.testing.assert_array_equal(out1.data, out2.data)
    assert not Encoder2D(SMALL_2D, seed=0).trainable


def test_encoder2d_seed_changes_output():
    img = np.random.default_rng(1).random((6, 7, 3))
    a = Encoder2D(SMALL_2D, seed=0).forward(img)
    b = Encoder2D(SMALL_2D, seed=1).forward(img)
    assert np.abs(a.data - b.data).max() > 1e-6


def test_encoder2d_rejects_even_kernels():
    with pytest.raises(ValueError):
        EncoderConfig2D(channels=(4,), kernels=(2,), dilations=(1,))


def test_voxel_grid_dims_and_indexing():
    assert SMALL_GRID.dims == (8, 8, 4)
    idx = SMALL_GRID.voxel_indices(np.array([[-4.0, -4.0, -2.0], [3.99, 3.99, 1.99]]))
    assert idx[0].tolist() == [0, 0, 0]
    assert idx[1].tolist() == [7, 7, 3]
    # out-of-range points clamp to the boundary voxel
    idx = SMALL_GRID.voxel_indices(np.array([[99.0, -99.0, 0.0]]))
    assert idx[0].tolist() == [7, 0, 2]


def test_voxel_grid_requires_exact_tiling():
    with pytest.raises(ValueError):
        VoxelGridConfig(
            x_range=(0.0, 1.0), y_range=(0.0, 1.0), z_range=(0.0, 1.0), voxel_size=(0.3, 0.5, 0.5)
        )


def test_encoder3d_same_voxel_same_features():
    enc = Encoder3D(SMALL_3D, seed=0)
    pts = np.array(
        [
            [0.1, 0.1, 0.1],
            [0.2, 0.3, 0.4],  # same voxel as the first point
            [-3.5, -3.5, -1.5],  # a far voxel
        ]
    )
    feats, voxels, occ = enc.forward(pts)
    assert feats.shape == (3, 4)
    np.testing.assert_array_equal(feats.data[0], feats.data[1])
    assert np.abs(feats.data[0] - feats.data[2]).max() > 1e-9
    assert voxels.shape == (8, 8, 4, 4)
    assert occ.sum() == 2


def test_encoder3d_empty_voxels_have_zero_features():
    enc = Encoder3D(SMALL_3D, seed=0)
    _, voxels, occ = enc.forward(np.array([[0.1, 0.1, 0.1]]))
    np.testing.assert_allclose(voxels.data[~occ], 0.0)


def test_encoder3d_is_deterministic():
    pts = np.random.default_rng(2).uniform(-3.9, 3.9, (40, 3)) * np.array([1, 1, 0.5])
    a, _, _ = Encoder3D(SMALL_3D, seed=5).forward(pts)
    b, _, _ = Encoder3D(SMALL_3D, seed=5).forward(pts)
    np.testing.assert_array_equal(a.data, b.data)


def test_encoder3d_gradients_flow_to_all_params():
    enc = Encoder3D(SMALL_3D, seed=0)
    pts = np.random.default_rng(3).uniform(-3.9, 3.9, (30, 3)) * np.array([1, 1, 0.5])
    feats, voxels, _ = enc.forward(pts)
    (ad.tsum(ad.mul(feats, feats)) + ad.tsum(voxels)).backward()
    for name, p in enc.params.items():
        assert p.grad is not None, name
        assert np.isfinite(p.grad).all(), name


def test_depth_head_uniform_on_zero_features():
    # zero input, zero biases: softmax over identical logits is uniform
    head = DepthHead(DepthHeadConfig(), in_channels=4, num_bins=9, seed=0)
    dist = head.forward(Tensor(np.zeros((5, 6, 4))), K)
    np.testing.assert_allclose(dist.probs.data, 1.0 / 9.0, atol=1e-12)
    assert dist.num_bins == 9


def test_depth_head_probabilities_sum_to_one():
    head = DepthHead(DepthHeadConfig(), in_channels=4, num_bins=7, seed=1)
    feats = Tensor(np.random.default_rng(0).standard_normal((5, 6, 4)))
    dist = head.forward(feats, K)
    np.testing.assert_allclose(dist.probs.data.sum(axis=2), 1.0, atol=1e-12)
    assert (dist.probs.data > 0.0).all()


def test_depth_head_is_camera_aware():
    head = DepthHead(DepthHeadConfig(), in_channels=4, num_bins=7, seed=1)
    feats = Tensor(np.random.default_rng(0).standard_normal((5, 6, 4)))
    k2 = CameraIntrinsics(fx=90.0, fy=10.0, cx=1.0, cy=4.0, width=7, height=6)
    a = head.forward(feats, K).probs.data
    b = head.forward(feats, k2).probs.data
    assert np.abs(a - b).max() > 1e-8


def test_depth_head_gradients():
    head = DepthHead(DepthHeadConfig(cam_hidden=4, cam_bottleneck=3, block_width=4, num_blocks=1),
                     in_channels=3, num_bins=5, seed=2)
    feats = Tensor(np.random.default_rng(1).standard_normal((4, 5, 3)), requires_grad=True)
    w = Tensor(np.random.default_rng(2).random((4, 5, 5)))

    def fn(feats, *params):
        return ad.tsum(ad.mul(head.forward(feats, K).probs, w))

    inputs = [feats] + list(head.params.values())
    assert finite_difference_check(fn, inputs) < 1e-4


def test_state_round_trip():
    enc = Encoder3D(SMALL_3D, seed=0)
    state = enc.state("student/")
    other = Encoder3D(SMALL_3D, seed=9)
    other.load_state(state, "student/")
    pts = np.random.default_rng(4).uniform(-3.9, 3.9, (10, 3)) * np.array([1, 1, 0.5])
    a, _, _ = enc.forward(pts)
    b, _, _ = other.forward(pts)
    np.testing.assert_array_equal(a.data, b.data)


def test_load_state_shape_mismatch():
    enc = Encoder2D(SMALL_2D, seed=0)
    state = enc.state()
    bad = {k: np.zeros((1, 1)) for k in state}
    with pytest.raises(ValueError):
        enc.load_state(bad)


def test_load_state_missing_key():
    enc = Encoder2D(SMALL_2D, seed=0)
    with pytest.raises(KeyError):
        enc.load_state({})


def test_frozen_teacher_params_not_trainable():
    enc = Encoder2D(SMALL_2D, seed=0, trainable=False)
    for p in enc.params.values():
        assert not p.requires_grad
    img = np.random.default_rng(0).random((6, 7, 3))
    out = enc.forward(img)
    assert not out.requires_grad


def test_encoder2d_receptive_field_dilation():
    # dilation widens the receptive field: a distant pixel flip must reach
    # the center output through the dilated second layer
    cfg = EncoderConfig2D(channels=(2, 2), kernels=(3, 3), dilations=(1, 3))
    enc = Encoder2D(cfg, seed=0)
    img = np.random.default_rng(0).random((9, 9, 3))
    base = enc.forward(img).data
    img2 = img.copy()
    img2[0, 4] += 1.0  # 4 rows away: 1 (first conv) + 3 (dilated) reaches it
    out = enc.forward(img2).data
    assert np.abs(out[4, 4] - base[4, 4]).max() > 1e-12
