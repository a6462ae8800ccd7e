"""Toy 2-D and 3-D feature encoders plus the camera-aware depth head.

The 2-D encoder stands in for a pretrained image backbone: a short stack
of dilated convolutions with fixed random weights.  The 3-D encoder is the
trainable student: per-voxel statistics pushed through small MLPs with one
round of neighborhood aggregation.  The depth head turns 2-D features into
a per-pixel categorical distribution over depth bins, modulated by a
camera-intrinsics embedding.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def _he_linear(rng, n_in, n_out):
    return rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)


def _he_conv(rng, kh, kw, cin, cout):
    return rng.standard_normal((kh, kw, cin, cout)) * np.sqrt(2.0 / (kh * kw * cin))


class ParamModule:
    """Common bookkeeping: an ordered name -> Tensor parameter dict."""

    def __init__(self, trainable):
        self.trainable = bool(trainable)
        self.params = {}

    def _add(self, name, value):
        t = Tensor(value, requires_grad=self.trainable)
        self.params[name] = t
        return t

    def load_state(self, arrays, prefix=""):
        for name, tensor in self.params.items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"missing parameter {key}")
            if arrays[key].shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {key}")
            tensor.data = np.array(arrays[key], dtype=np.float64)

    def state(self, prefix=""):
        return {prefix + name: t.data.copy() for name, t in self.params.items()}


@dataclass(frozen=True)
class EncoderConfig2D:
    channels: tuple = (16, 16, 16)
    kernels: tuple = (3, 3, 3)
    dilations: tuple = (1, 2, 1)

    def __post_init__(self):
        if not (len(self.channels) == len(self.kernels) == len(self.dilations)):
            raise ValueError("per-layer config lists must align")
        if any(k % 2 == 0 for k in self.kernels):
            raise ValueError("kernel sizes must be odd")

    @property
    def out_channels(self):
        return self.channels[-1]


class Encoder2D(ParamModule):
    """Stride-1 convolutional stack; spatial resolution is preserved."""

    def __init__(self, config, seed, trainable=False):
        super().__init__(trainable)
        self.config = config
        rng = np.random.default_rng(seed)
        cin = 3
        for i, (c, k, _) in enumerate(zip(config.channels, config.kernels, config.dilations)):
            self._add(f"conv{i}/w", _he_conv(rng, k, k, cin, c))
            self._add(f"conv{i}/b", np.zeros(c))
            cin = c

    def forward(self, image):
        x = image if isinstance(image, Tensor) else Tensor(image)
        n = len(self.config.channels)
        for i, dil in enumerate(self.config.dilations):
            x = ad.conv2d(x, self.params[f"conv{i}/w"], self.params[f"conv{i}/b"], dilation=dil)
            if i < n - 1:
                x = ad.relu(x)
        return x


@dataclass(frozen=True)
class VoxelGridConfig:
    """Axis-aligned voxel lattice over the scene bounds."""

    x_range: tuple = (-20.0, 20.0)
    y_range: tuple = (-20.0, 20.0)
    z_range: tuple = (-2.0, 6.0)
    voxel_size: tuple = (1.25, 1.25, 1.0)

    def __post_init__(self):
        for (lo, hi), step in zip((self.x_range, self.y_range, self.z_range), self.voxel_size):
            if hi <= lo or step <= 0.0:
                raise ValueError("degenerate voxel grid extent")
            n = (hi - lo) / step
            if abs(n - round(n)) > 1e-9:
                raise ValueError("voxel size must tile the extent exactly")

    @property
    def dims(self):
        return tuple(
            int(round((hi - lo) / s))
            for (lo, hi), s in zip((self.x_range, self.y_range, self.z_range), self.voxel_size)
        )

    def voxel_indices(self, points):
        """Per-point (ix, iy, iz), clamping out-of-bounds points to the
        boundary voxels."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        lows = np.array([self.x_range[0], self.y_range[0], self.z_range[0]])
        sizes = np.array(self.voxel_size)
        idx = np.floor((p - lows) / sizes).astype(np.int64)
        return np.clip(idx, 0, np.array(self.dims) - 1)


@dataclass(frozen=True)
class EncoderConfig3D:
    grid: VoxelGridConfig = field(default_factory=VoxelGridConfig)
    hidden: int = 32
    out_channels: int = 16


_N_VOXEL_STATS = 5


class Encoder3D(ParamModule):
    """Voxel-statistics student network.

    Each occupied voxel is summarized by point-count fill and mean offsets,
    embedded by an MLP, mixed with a 3x3x3 neighborhood average, and read
    back per point through a final linear layer.  Two points in the same
    voxel receive identical features.
    """

    def __init__(self, config, seed, trainable=True):
        super().__init__(trainable)
        self.config = config
        rng = np.random.default_rng(seed)
        h, c = config.hidden, config.out_channels
        self._add("embed/w", _he_linear(rng, _N_VOXEL_STATS, h))
        self._add("embed/b", np.zeros(h))
        self._add("mix/w_self", _he_linear(rng, h, c))
        self._add("mix/w_ctx", _he_linear(rng, h, c))
        self._add("mix/b", np.zeros(c))
        self._add("head/w", _he_linear(rng, c, c))
        self._add("head/b", np.zeros(c))

    def voxel_stats(self, points):
        """Non-differentiable voxel summary: (stats, occupancy, point_voxel)."""
        grid = self.config.grid
        nx, ny, nz = grid.dims
        idx = grid.voxel_indices(points)
        flat = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]
        nvox = nx * ny * nz
        counts = np.bincount(flat, minlength=nvox).astype(np.float64)
        occupancy = counts > 0

        lows = np.array([grid.x_range[0], grid.y_range[0], grid.z_range[0]])
        sizes = np.array(grid.voxel_size)
        centers = lows + (idx + 0.5) * sizes
        offsets = (np.asarray(points).reshape(-1, 3) - centers) / (0.5 * sizes)

        stats = np.zeros((nvox, _N_VOXEL_STATS))
        stats[:, 0] = np.minimum(counts, 8.0) / 8.0
        denom = np.where(occupancy, counts, 1.0)
        for a in range(3):
            sums = np.bincount(flat, weights=offsets[:, a], minlength=nvox)
            stats[:, 1 + a] = sums / denom
        zc_lo, zc_hi = grid.z_range
        z_centers = lows[2] + (np.arange(nz) + 0.5) * sizes[2]
        z_norm = (z_centers - zc_lo) / (zc_hi - zc_lo) * 2.0 - 1.0
        stats[:, 4] = np.where(occupancy, np.tile(z_norm, nx * ny), 0.0)
        return stats, occupancy, flat

    def forward(self, points):
        """Returns (point features (N, C), voxel grid (X, Y, Z, C), occupancy)."""
        grid = self.config.grid
        nx, ny, nz = grid.dims
        c = self.config.out_channels
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        stats, occupancy, point_voxel = self.voxel_stats(pts)
        occ = Tensor(occupancy.astype(np.float64)[:, None])

        h = ad.relu(ad.matmul(Tensor(stats), self.params["embed/w"]) + self.params["embed/b"])
        h = ad.mul(h, occ)
        ctx = ad.neighbor_mean3d(h.reshape((nx, ny, nz, self.config.hidden)))
        ctx = ctx.reshape((nx * ny * nz, self.config.hidden))
        mixed = ad.relu(
            ad.matmul(h, self.params["mix/w_self"])
            + ad.matmul(ctx, self.params["mix/w_ctx"])
            + self.params["mix/b"]
        )
        mixed = ad.mul(mixed, occ)
        voxel_feats = mixed.reshape((nx, ny, nz, c))
        if pts.shape[0]:
            per_point = ad.gather_rows(mixed, point_voxel)
            point_feats = ad.matmul(per_point, self.params["head/w"]) + self.params["head/b"]
        else:
            point_feats = Tensor(np.zeros((0, c)))
        return point_feats, voxel_feats, occupancy.reshape(nx, ny, nz)


@dataclass
class DepthDistribution:
    """Per-pixel categorical distribution over depth bins: (H, W, T)."""

    probs: Tensor

    @property
    def num_bins(self):
        return self.probs.shape[2]


@dataclass(frozen=True)
class DepthHeadConfig:
    cam_hidden: int = 16
    cam_bottleneck: int = 8
    block_width: int = 16
    num_blocks: int = 2
    # Shrinks the logit layer's init so bin distributions start near uniform.
    # The summed-over-bins cross entropy has unbounded gradients as any
    # wrong bin's probability approaches 1; a soft start keeps momentum SGD
    # out of that regime at learning rates the contrastive terms need.
    out_init_scale: float = 0.1


class DepthHead(ParamModule):
    """Depth estimation head: N(SE(MLP(cam), features)) -> softmax bins.

    The camera embedding gates feature channels (squeeze-excitation style),
    then residual conv blocks refine the map and a final convolution emits
    per-bin logits.  With zero input features the output is exactly uniform
    because every bias starts at zero.
    """

    def __init__(self, config, in_channels, num_bins, seed, trainable=True):
        super().__init__(trainable)
        self.config = config
        self.in_channels = in_channels
        self.num_bins = num_bins
        rng = np.random.default_rng(seed)
        self._add("cam/w1", _he_linear(rng, 6, config.cam_hidden))
        self._add("cam/b1", np.zeros(config.cam_hidden))
        self._add("cam/w2", _he_linear(rng, config.cam_hidden, config.cam_bottleneck))
        self._add("cam/b2", np.zeros(config.cam_bottleneck))
        self._add("cam/wg", _he_linear(rng, config.cam_bottleneck, in_channels))
        self._add("cam/bg", np.zeros(in_channels))
        for i in range(config.num_blocks):
            self._add(f"block{i}/w1", _he_conv(rng, 3, 3, in_channels, config.block_width))
            self._add(f"block{i}/b1", np.zeros(config.block_width))
            self._add(f"block{i}/w2", _he_conv(rng, 3, 3, config.block_width, in_channels))
            self._add(f"block{i}/b2", np.zeros(in_channels))
        self._add("out/w", _he_conv(rng, 3, 3, in_channels, num_bins) * config.out_init_scale)
        self._add("out/b", np.zeros(num_bins))

    def camera_gate(self, intrinsic):
        vec = np.array(
            [
                intrinsic.fx,
                intrinsic.fy,
                intrinsic.cx,
                intrinsic.cy,
                float(intrinsic.width),
                float(intrinsic.height),
            ]
        )
        vec = vec / np.hypot(intrinsic.width, intrinsic.height)
        e = ad.relu(ad.matmul(Tensor(vec[None, :]), self.params["cam/w1"]) + self.params["cam/b1"])
        e = ad.relu(ad.matmul(e, self.params["cam/w2"]) + self.params["cam/b2"])
        g = ad.sigmoid(ad.matmul(e, self.params["cam/wg"]) + self.params["cam/bg"])
        return g.reshape((self.in_channels,))

    def forward(self, features, intrinsic):
        x = ad.mul(features, self.camera_gate(intrinsic))
        for i in range(self.config.num_blocks):
            inner = ad.conv2d(x, self.params[f"block{i}/w1"], self.params[f"block{i}/b1"])
            inner = ad.conv2d(ad.relu(inner), self.params[f"block{i}/w2"], self.params[f"block{i}/b2"])
            x = ad.add(x, inner)
        logits = ad.conv2d(x, self.params["out/w"], self.params["out/b"])
        return DepthDistribution(ad.softmax(logits, axis=-1))
