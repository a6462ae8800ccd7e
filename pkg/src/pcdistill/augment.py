"""Stochastic scene augmentations with exactly replayable records.

Point clouds get a rigid-ish jitter (z-rotation, axis flips, isotropic
scale, translation) plus one random cuboid dropout.  Images get a crop,
a bilinear resize, and an optional horizontal flip.  Every draw is stored
in an AugmentRecord so the transform can be replayed bit-for-bit, the
camera intrinsics can be adjusted to the patch, and BEV maps built from
augmented points can be resampled back into the original frame.

The horizontal flip is deliberately not folded into the intrinsics (that
would need a negative focal length); it stays a flag on the record and is
applied to pixel coordinates when projecting into or lifting out of a
flipped patch.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, gather_rows
from .bev import BevFeatureMap
from .geometry import CameraIntrinsics, PointCloud, project_point_arrays


@dataclass(frozen=True)
class AugmentConfig:
    rotation_range: tuple = (-np.pi, np.pi)
    flip_prob: float = 0.5
    scale_range: tuple = (0.95, 1.05)
    translation_max: float = 0.5
    drop_prob: float = 1.0
    drop_size_range: tuple = (2.0, 6.0)
    drop_center_max: float = 15.0
    drop_z_range: tuple = (-2.0, 4.0)
    crop_scale_range: tuple = (0.7, 1.0)
    image_flip_prob: float = 0.5


@dataclass
class AugmentRecord:
    """Every sampled transform parameter, defaulting to the identity."""

    rotation: float = 0.0
    flip_x: bool = False
    flip_y: bool = False
    scale: float = 1.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    drop_bounds: np.ndarray = None  # (3, 2) lo/hi per axis, in augmented coords
    kept_indices: np.ndarray = None
    crop: tuple = None  # (row0, col0, height, width)
    out_size: tuple = None  # (height, width) after resize
    hflip: bool = False


def _rotation_matrix_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def transform_points(record, points):
    """Forward point transform (without the dropout)."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3) @ _rotation_matrix_z(record.rotation).T
    if record.flip_x:
        p = p * np.array([-1.0, 1.0, 1.0])
    if record.flip_y:
        p = p * np.array([1.0, -1.0, 1.0])
    return p * record.scale + record.translation


def invert_points(record, points):
    """Inverse of ``transform_points``."""
    p = (np.asarray(points, dtype=np.float64).reshape(-1, 3) - record.translation) / record.scale
    if record.flip_y:
        p = p * np.array([1.0, -1.0, 1.0])
    if record.flip_x:
        p = p * np.array([-1.0, 1.0, 1.0])
    return p @ _rotation_matrix_z(record.rotation)


def transform_xy(record, xy):
    """Forward transform restricted to the ground plane."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    p3 = np.concatenate([xy, np.zeros((xy.shape[0], 1))], axis=1)
    return transform_points(record, p3)[:, :2]


def augment_points(cloud, seed, config=AugmentConfig()):
    """Sample a point augmentation; returns (augmented cloud, record)."""
    rng = np.random.default_rng(seed)
    record = AugmentRecord(
        rotation=rng.uniform(*config.rotation_range),
        flip_x=bool(rng.random() < config.flip_prob),
        flip_y=bool(rng.random() < config.flip_prob),
        scale=rng.uniform(*config.scale_range),
        translation=rng.uniform(-config.translation_max, config.translation_max, size=3),
    )
    moved = transform_points(record, cloud.points)
    if rng.random() < config.drop_prob:
        center = np.array(
            [
                rng.uniform(-config.drop_center_max, config.drop_center_max),
                rng.uniform(-config.drop_center_max, config.drop_center_max),
                rng.uniform(*config.drop_z_range),
            ]
        )
        size = rng.uniform(*config.drop_size_range, size=3)
        lo = center - size / 2
        hi = center + size / 2
        record.drop_bounds = np.stack([lo, hi], axis=1)
        inside = ((moved >= lo) & (moved <= hi)).all(axis=1)
        record.kept_indices = np.nonzero(~inside)[0]
    else:
        record.kept_indices = np.arange(len(cloud))
    labels = None if cloud.labels is None else cloud.labels[record.kept_indices]
    return PointCloud(moved[record.kept_indices], labels), record


def replay_points(cloud, record):
    """Re-apply a recorded point augmentation; identical output each time."""
    moved = transform_points(record, cloud.points)
    kept = record.kept_indices if record.kept_indices is not None else np.arange(len(cloud))
    labels = None if cloud.labels is None else cloud.labels[kept]
    return PointCloud(moved[kept], labels)


def _bilinear_resize(image, out_h, out_w):
    h, w = image.shape[:2]
    sy = h / out_h
    sx = w / out_w
    ys = np.clip((np.arange(out_h) + 0.5) * sy - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * sx - 0.5, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = image[y0][:, x0] * (1.0 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1.0 - wx) + image[y1][:, x1] * wx
    return top * (1.0 - wy) + bot * wy


def augment_image(image, seed, config=AugmentConfig(), out_size=None):
    """Sample crop/resize/flip; returns (patch, record).

    ``out_size`` defaults to the native image size, so an identity config
    (crop scale 1, flip prob 0) reproduces the input exactly.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if out_size is None:
        out_size = (h, w)
    rng = np.random.default_rng(seed)
    s = rng.uniform(*config.crop_scale_range)
    crop_h = max(1, int(round(h * s)))
    crop_w = max(1, int(round(w * s)))
    r0 = int(rng.integers(0, h - crop_h + 1))
    c0 = int(rng.integers(0, w - crop_w + 1))
    record = AugmentRecord(
        crop=(r0, c0, crop_h, crop_w),
        out_size=tuple(out_size),
        hflip=bool(rng.random() < config.image_flip_prob),
    )
    return replay_image(img, record), record


def replay_image(image, record):
    r0, c0, ch, cw = record.crop
    out_h, out_w = record.out_size
    patch = np.asarray(image, dtype=np.float64)[r0 : r0 + ch, c0 : c0 + cw]
    if (ch, cw) != (out_h, out_w):
        patch = _bilinear_resize(patch, out_h, out_w)
    else:
        patch = patch.copy()
    if record.hflip:
        patch = patch[:, ::-1].copy()
    return patch


def adjust_intrinsics(record, intrinsic):
    """Intrinsics for the cropped/resized patch (flip handled separately)."""
    r0, c0, ch, cw = record.crop
    out_h, out_w = record.out_size
    sx = out_w / cw
    sy = out_h / ch
    return CameraIntrinsics(
        fx=intrinsic.fx * sx,
        fy=intrinsic.fy * sy,
        cx=(intrinsic.cx - c0 + 0.5) * sx - 0.5,
        cy=(intrinsic.cy - r0 + 0.5) * sy - 0.5,
        width=out_w,
        height=out_h,
    )


def flip_u(record, u):
    """Mirror patch column coordinates when the record flipped the image."""
    if not record.hflip:
        return u
    return (record.out_size[1] - 1) - np.asarray(u, dtype=np.float64)


def project_into_patch(points, extrinsic, intrinsic, record):
    """Project sensor-frame points into an augmented patch.

    Returns (indices, u, v, depth) in patch pixel coordinates, including
    the horizontal flip if the record has one.
    """
    patched = adjust_intrinsics(record, intrinsic) if record.crop else intrinsic
    idx, u, v, z = project_point_arrays(points, extrinsic, patched)
    return idx, flip_u(record, u), v, z


def invert_for_bev(record, bev_map):
    """Resample a BEV map built from augmented points back into the
    original sensor frame (nearest-cell gather; differentiable)."""
    grid = bev_map.grid
    source = transform_xy(record, grid.cell_centers())
    idx = grid.cell_of(source)
    rows, cols, c = bev_map.features.shape
    flat = bev_map.features.reshape((rows * cols, c))
    gathered = gather_rows(flat, idx, allow_negative=True)
    feats = gathered.reshape((rows, cols, c))
    mask_flat = bev_map.mask.reshape(-1)
    mask = np.where(idx >= 0, mask_flat[np.maximum(idx, 0)], False).reshape(rows, cols)
    return BevFeatureMap(feats, mask, grid)
