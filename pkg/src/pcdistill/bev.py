"""Bird's-eye-view feature maps from images (lift-splat) and point clouds.

The image path expands every pixel feature along its camera ray, weighted
by the pixel's depth distribution, and scatters the mass into ground-plane
cells (sum over heights).  The point path flattens the student's voxel
grid heightwise and refines it with a small conv stack.  Both finish with
per-cell L2 normalization so cells are comparable under a dot product.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, make_op
from .encoders import ParamModule, _he_conv
from .geometry import bin_centers, lift_pixels


@dataclass(frozen=True)
class BevGridConfig:
    """Square-celled ground-plane lattice; rows index x, columns index y."""

    x_range: tuple = (-20.0, 20.0)
    y_range: tuple = (-20.0, 20.0)
    rows: int = 32
    cols: int = 32
    channels: int = 16

    def __post_init__(self):
        rx = (self.x_range[1] - self.x_range[0]) / self.rows
        ry = (self.y_range[1] - self.y_range[0]) / self.cols
        if rx <= 0.0 or ry <= 0.0:
            raise ValueError("degenerate grid extent")
        if abs(rx - ry) > 1e-9:
            raise ValueError("cells must be square")

    @property
    def cell_size(self):
        return (self.x_range[1] - self.x_range[0]) / self.rows

    def cell_of(self, xy):
        """Floor-division cell lookup; -1 flags out-of-grid positions."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        i = np.floor((xy[:, 0] - self.x_range[0]) / self.cell_size).astype(np.int64)
        j = np.floor((xy[:, 1] - self.y_range[0]) / self.cell_size).astype(np.int64)
        inside = (i >= 0) & (i < self.rows) & (j >= 0) & (j < self.cols)
        return np.where(inside, i * self.cols + j, -1)

    def cell_centers(self):
        """(rows*cols, 2) array of cell-center x/y, row-major."""
        xs = self.x_range[0] + (np.arange(self.rows) + 0.5) * self.cell_size
        ys = self.y_range[0] + (np.arange(self.cols) + 0.5) * self.cell_size
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)


@dataclass
class BevFeatureMap:
    """(rows, cols, channels) features with an occupancy mask.

    Finalized maps have unit-norm feature vectors on masked cells and exact
    zeros elsewhere.
    """

    features: Tensor
    mask: np.ndarray
    grid: BevGridConfig


def lift_splat_accumulate(features, depth, intrinsic, extrinsic, grid, binning, hflip=False):
    """Scatter depth-weighted pixel features into BEV cells (one view).

    Returns the raw accumulated (rows, cols, C) Tensor and the scalar mass
    per cell (absolute feature mass times depth weight) used for occupancy.
    Accumulation order is pixel-major then bin, so results are
    bit-reproducible.
    """
    feat = features if isinstance(features, Tensor) else Tensor(features)
    probs = depth.probs
    h, w, c = feat.shape
    t = probs.shape[2]
    if probs.shape[:2] != (h, w):
        raise ValueError("feature map and depth distribution sizes differ")

    vv, uu = np.mgrid[0:h, 0:w]
    u_geom = uu.ravel().astype(np.float64)
    if hflip:
        u_geom = (w - 1) - u_geom
    centers = bin_centers(binning)
    n_pix = h * w
    u_rep = np.repeat(u_geom, t)
    v_rep = np.repeat(vv.ravel().astype(np.float64), t)
    d_rep = np.tile(centers, n_pix)
    world = lift_pixels(u_rep, v_rep, d_rep, intrinsic, extrinsic)
    cell = grid.cell_of(world[:, :2])  # (n_pix * t,)
    valid = cell >= 0

    flat_feat = feat.reshape((n_pix, c))
    flat_prob = probs.reshape((n_pix, t))

    def compute(fdata, pdata):
        vals = (pdata[:, :, None] * fdata[:, None, :]).reshape(n_pix * t, c)
        acc = np.zeros((grid.rows * grid.cols, c))
        np.add.at(acc, cell[valid], vals[valid])
        return acc

    acc_data = compute(flat_feat.data, flat_prob.data)

    def backward(g):
        g_cells = np.zeros((n_pix * t, c))
        g_cells[valid] = g.reshape(grid.rows * grid.cols, c)[cell[valid]]
        g_cells = g_cells.reshape(n_pix, t, c)
        if flat_feat.requires_grad:
            flat_feat._accumulate(np.einsum("ptc,pt->pc", g_cells, flat_prob.data))
        if flat_prob.requires_grad:
            flat_prob._accumulate(np.einsum("ptc,pc->pt", g_cells, flat_feat.data))

    acc = make_op(acc_data, (flat_feat, flat_prob), backward)

    mass_vals = np.abs(flat_feat.data).sum(axis=1)[:, None] * flat_prob.data
    mass = np.zeros(grid.rows * grid.cols)
    np.add.at(mass, cell[valid], mass_vals.reshape(-1)[valid])
    return acc.reshape((grid.rows, grid.cols, c)), mass.reshape(grid.rows, grid.cols)


def finalize_bev(acc, mass, grid):
    """Normalize accumulated features; cells without mass stay exact zeros."""
    normed = ad.l2_normalize(acc, axis=2)
    norms = np.sqrt((acc.data ** 2).sum(axis=2))
    mask = (mass > 0.0) & (norms > 0.0)
    return BevFeatureMap(normed, mask, grid)


def lift_splat(features, depth, intrinsic, extrinsic, grid, binning, hflip=False):
    """Single-view image BEV map: accumulate, then normalize per cell."""
    acc, mass = lift_splat_accumulate(features, depth, intrinsic, extrinsic, grid, binning, hflip)
    return finalize_bev(acc, mass, grid)


class PointBevHead(ParamModule):
    """Height-collapse of the voxel grid followed by three 3x3 convs."""

    def __init__(self, grid, voxel_dims, voxel_channels, seed, trainable=True):
        super().__init__(trainable)
        nx, ny, nz = voxel_dims
        if (nx, ny) != (grid.rows, grid.cols):
            raise ValueError("voxel grid footprint must match the BEV grid")
        self.grid = grid
        self.voxel_dims = voxel_dims
        self.in_channels = nz * voxel_channels
        rng = np.random.default_rng(seed)
        widths = [self.in_channels, grid.channels, grid.channels, grid.channels]
        for i in range(3):
            self._add(f"conv{i}/w", _he_conv(rng, 3, 3, widths[i], widths[i + 1]))
            self._add(f"conv{i}/b", np.zeros(widths[i + 1]))

    def forward(self, voxel_features, occupancy):
        """voxel_features: (X, Y, Z, C) Tensor; occupancy: (X, Y, Z) bool."""
        nx, ny, nz = self.voxel_dims
        x = voxel_features.reshape((nx, ny, self.in_channels))
        for i in range(3):
            x = ad.conv2d(x, self.params[f"conv{i}/w"], self.params[f"conv{i}/b"])
            if i < 2:
                x = ad.relu(x)
        column_mask = occupancy.any(axis=2)
        x = ad.mul(x, Tensor(column_mask.astype(np.float64)[:, :, None]))
        normed = ad.l2_normalize(x, axis=2)
        norms = np.sqrt((x.data ** 2).sum(axis=2))
        return BevFeatureMap(normed, column_mask & (norms > 0.0), self.grid)


def point_bev_collapse(voxel_features, occupancy, head):
    """Functional face of PointBevHead.forward."""
    return head.forward(voxel_features, occupancy)


def nonzero_grid_indices(bev_map):
    """Row-major (i, j) list of occupied cells."""
    ii, jj = np.nonzero(bev_map.mask)
    return list(zip(ii.tolist(), jj.tolist()))
