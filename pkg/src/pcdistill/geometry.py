"""Pinhole camera geometry, rigid transforms, and depth discretization.

Conventions: the sensor frame has x forward, y left, z up.  The camera
frame has x right, y down, z forward (into the image).  Pixel coordinates
are continuous with (0, 0) at the center of the top-left pixel; a pixel
(u, v) is in bounds when 0 <= u < width and 0 <= v < height.
"""

from dataclasses import dataclass

import numpy as np

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters: u = fx * x/z + cx, v = fy * y/z + cy."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ValueError("image size must be positive")
        for v in (self.fx, self.fy, self.cx, self.cy):
            if not np.isfinite(v):
                raise ValueError("intrinsics must be finite")


class RigidTransform:
    """Proper rigid motion y = R @ x + t with R orthonormal, det(R) = +1."""

    def __init__(self, rotation, translation):
        r = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.isfinite(r).all() or not np.isfinite(t).all():
            raise ValueError("transform entries must be finite")
        if np.abs(r @ r.T - np.eye(3)).max() > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant must be +1")
        self.rotation = r
        self.translation = t

    def apply(self, points):
        """Transform an (N, 3) array (or a single 3-vector)."""
        p = np.asarray(points, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def inverse(self):
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other):
        """Transform equal to applying ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def rotation_z(angle):
        c, s = np.cos(angle), np.sin(angle)
        return RigidTransform([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], np.zeros(3))


@dataclass
class PointCloud:
    """Points in the sensor frame with optional per-point class labels."""

    points: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
            if self.labels.shape[0] != self.points.shape[0]:
                raise ValueError("one label per point required")

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class Projection:
    """One point landing on the image plane."""

    point_index: int
    u: float
    v: float
    depth: float


@dataclass
class SparseDepthMap:
    """Per-pixel depth where at least one point projected; 0 elsewhere."""

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.depth.shape != self.valid.shape:
            raise ValueError("depth and validity mask must share a shape")


@dataclass(frozen=True)
class DepthBinning:
    """Uniform partition of [d_min, d_max] into t ordinal bins."""

    d_min: float = 2.0
    d_max: float = 60.0
    t: int = 118

    def __post_init__(self):
        if not (0.0 < self.d_min < self.d_max):
            raise ValueError("require 0 < d_min < d_max")
        if self.t < 1:
            raise ValueError("need at least one bin")

    @property
    def bin_width(self):
        return (self.d_max - self.d_min) / self.t


def round_pixel(x, size):
    """Round continuous coordinates to pixel indices, ties toward the
    smaller index, clamped into [0, size)."""
    idx = np.ceil(np.asarray(x, dtype=np.float64) - 0.5).astype(np.int64)
    return np.clip(idx, 0, size - 1)


def project_point_arrays(points, extrinsic, intrinsic):
    """Vectorized projection of an (N, 3) array into one camera.

    Returns (indices, u, v, depth) for points with positive camera-frame
    depth that land inside the image bounds.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = extrinsic.apply(p)
    z = cam[:, 2]
    front = z > 0.0
    u = np.full(p.shape[0], -1.0)
    v = np.full(p.shape[0], -1.0)
    u[front] = intrinsic.fx * cam[front, 0] / z[front] + intrinsic.cx
    v[front] = intrinsic.fy * cam[front, 1] / z[front] + intrinsic.cy
    keep = front & (u >= 0.0) & (u < intrinsic.width) & (v >= 0.0) & (v < intrinsic.height)
    idx = np.nonzero(keep)[0]
    return idx, u[keep], v[keep], z[keep]


def project_points(cloud, extrinsic, intrinsic):
    """Project a point cloud into one camera, dropping points behind the
    camera or outside the image."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    idx, u, v, z = project_point_arrays(pts, extrinsic, intrinsic)
    return [Projection(int(i), float(a), float(b), float(d)) for i, a, b, d in zip(idx, u, v, z)]


def render_sparse_depth_arrays(u, v, depth, width, height):
    """Z-buffered sparse depth: nearest depth wins per rounded pixel."""
    cols = round_pixel(u, width)
    rows = round_pixel(v, height)
    buf = np.full((height, width), np.inf)
    np.minimum.at(buf, (rows, cols), np.asarray(depth, dtype=np.float64))
    valid = np.isfinite(buf)
    buf[~valid] = 0.0
    return SparseDepthMap(buf, valid)


def render_sparse_depth(projections, width, height):
    u = np.array([p.u for p in projections])
    v = np.array([p.v for p in projections])
    d = np.array([p.depth for p in projections])
    return render_sparse_depth_arrays(u, v, d, width, height)


def discretize_depth(depth, binning):
    """Map metric depth to a bin index; out-of-range clamps to the
    boundary bins."""
    d = np.asarray(depth, dtype=np.float64)
    if not np.isfinite(d).all():
        raise ValueError("depth must be finite")
    rel = (d - binning.d_min) / (binning.d_max - binning.d_min)
    idx = np.clip(np.floor(rel * binning.t).astype(np.int64), 0, binning.t - 1)
    return int(idx) if np.isscalar(depth) or d.ndim == 0 else idx


def bin_center(index, binning):
    idx = np.asarray(index, dtype=np.int64)
    if (idx < 0).any() or (idx >= binning.t).any():
        raise ValueError("bin index out of range")
    center = binning.d_min + (idx + 0.5) * binning.bin_width
    return float(center) if np.isscalar(index) else center


def bin_centers(binning):
    return binning.d_min + (np.arange(binning.t) + 0.5) * binning.bin_width


def lift_pixels(u, v, depth, intrinsic, extrinsic):
    """Inverse projection of pixel coordinates at given metric depths back
    into the sensor frame.  Vectorized; depths must be positive."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    d = np.asarray(depth, dtype=np.float64)
    if (d <= 0.0).any():
        raise ValueError("lift requires positive depth")
    cam = np.stack(
        [(u - intrinsic.cx) * d / intrinsic.fx, (v - intrinsic.cy) * d / intrinsic.fy, d],
        axis=-1,
    )
    return extrinsic.inverse().apply(cam)


def lift_pixel(u, v, depth, intrinsic, extrinsic):
    return lift_pixels(np.float64(u), np.float64(v), np.float64(depth), intrinsic, extrinsic)
