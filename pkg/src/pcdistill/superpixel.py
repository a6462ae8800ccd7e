"""SLIC superpixels, superpoint grouping, and segment feature pooling.

The segmentation is a plain local k-means over (color, position) with the
standard SLIC distance; it is fully deterministic so the image/point
pairing built on top of it is reproducible.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .autodiff import Tensor, l2_normalize, segment_mean
from .geometry import round_pixel

# Colors are compared on a 0..255 scale so the conventional compactness
# range (~1..40) behaves as expected for [0, 1] float images.
_COLOR_SCALE = 255.0


@dataclass
class SuperpixelMap:
    """Dense segment labels: every pixel carries one id in [0, num_segments)."""

    labels: np.ndarray
    num_segments: int


@dataclass
class SuperpointGroups:
    """Per-segment lists of point indices (points visible in the view)."""

    groups: list
    num_segments: int


@dataclass
class SegmentFeatures:
    """Pooled per-segment feature rows; invalid rows are zero."""

    features: Tensor
    valid: np.ndarray


def _init_centroid_grid(h, w, k):
    """Near-square centroid grid with at least k cells."""
    cols = max(1, int(np.ceil(np.sqrt(k * w / h))))
    rows = int(np.ceil(k / cols))
    ys = (np.arange(rows) + 0.5) * h / rows
    xs = (np.arange(cols) + 0.5) * w / cols
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return np.stack([yy.ravel(), xx.ravel()], axis=1)


def _perturb_to_low_gradient(image, centers):
    """Move each seed to the lowest-gradient pixel in its 3x3 neighborhood."""
    h, w = image.shape[:2]
    gy = np.zeros((h, w))
    gx = np.zeros((h, w))
    gy[:-1] = ((image[1:] - image[:-1]) ** 2).sum(axis=2)
    gx[:, :-1] = ((image[:, 1:] - image[:, :-1]) ** 2).sum(axis=2)
    grad = gy + gx
    out = np.empty_like(centers)
    for i, (cy, cx) in enumerate(centers):
        r = int(np.clip(round(cy), 0, h - 1))
        c = int(np.clip(round(cx), 0, w - 1))
        best = (np.inf, r, c)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and grad[rr, cc] < best[0]:
                    best = (grad[rr, cc], rr, cc)
        out[i] = (best[1], best[2])
    return out


def _enforce_connectivity(labels):
    """Merge disconnected fragments of each label into the neighboring
    label they touch most, keeping each label's largest component."""
    h, w = labels.shape
    out = labels.copy()
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    for lab in np.unique(labels):
        comp, n = ndimage.label(out == lab, structure=structure)
        if n <= 1:
            continue
        sizes = ndimage.sum_labels(np.ones_like(comp), comp, index=np.arange(1, n + 1))
        keep = int(np.argmax(sizes)) + 1
        for ci in range(1, n + 1):
            if ci == keep:
                continue
            frag = comp == ci
            ring = ndimage.binary_dilation(frag, structure=structure) & ~frag
            neighbors = out[ring]
            neighbors = neighbors[neighbors != lab]
            if neighbors.size == 0:
                continue
            vals, counts = np.unique(neighbors, return_counts=True)
            out[frag] = vals[np.argmax(counts)]
    # compress to a dense range, ordered by original label id
    survivors = np.unique(out)
    remap = np.zeros(survivors.max() + 1, dtype=np.int64)
    remap[survivors] = np.arange(survivors.size)
    return remap[out], survivors.size


def slic_segment(image, k, compactness=10.0, iterations=10):
    """Segment an (H, W, 3) image in [0, 1] into about ``k`` superpixels.

    Returns a SuperpixelMap whose labels form a partition: every pixel is
    assigned and every label id in [0, num_segments) is non-empty.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    h, w = img.shape[:2]
    if not 1 <= k <= h * w:
        raise ValueError("segment count must be in [1, H*W]")
    if iterations < 1:
        raise ValueError("need at least one assignment pass")
    color = img * _COLOR_SCALE
    s = np.sqrt(h * w / k)
    spatial_weight = compactness / s

    centers = _perturb_to_low_gradient(color, _init_centroid_grid(h, w, k))
    cent_color = color[centers[:, 0].astype(int), centers[:, 1].astype(int)]
    cent_pos = centers.astype(np.float64)

    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(iterations):
        dist = np.full((h, w), np.inf)
        labels = np.zeros((h, w), dtype=np.int64)
        for m in range(cent_pos.shape[0]):
            cy, cx = cent_pos[m]
            r0, r1 = max(0, int(cy - 2 * s)), min(h, int(cy + 2 * s) + 1)
            c0, c1 = max(0, int(cx - 2 * s)), min(w, int(cx + 2 * s) + 1)
            if r0 >= r1 or c0 >= c1:
                continue
            dc = np.sqrt(((color[r0:r1, c0:c1] - cent_color[m]) ** 2).sum(axis=2))
            dxy = np.sqrt((ys[r0:r1, c0:c1] - cy) ** 2 + (xs[r0:r1, c0:c1] - cx) ** 2)
            d = dc + spatial_weight * dxy
            win_d = dist[r0:r1, c0:c1]
            win_l = labels[r0:r1, c0:c1]
            better = d < win_d
            win_d[better] = d[better]
            win_l[better] = m
        if np.isinf(dist).any():
            # stray pixels outside every search window: assign by full distance
            for r, c in zip(*np.nonzero(np.isinf(dist))):
                dc = np.sqrt(((cent_color - color[r, c]) ** 2).sum(axis=1))
                dxy = np.sqrt((cent_pos[:, 0] - r) ** 2 + (cent_pos[:, 1] - c) ** 2)
                labels[r, c] = int(np.argmin(dc + spatial_weight * dxy))
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=cent_pos.shape[0]).astype(np.float64)
        occupied = counts > 0
        denom = np.where(occupied, counts, 1.0)
        for ch in range(3):
            sums = np.bincount(flat, weights=color[:, :, ch].ravel(), minlength=denom.size)
            cent_color[occupied, ch] = sums[occupied] / denom[occupied]
        sum_y = np.bincount(flat, weights=ys.ravel().astype(np.float64), minlength=denom.size)
        sum_x = np.bincount(flat, weights=xs.ravel().astype(np.float64), minlength=denom.size)
        cent_pos[occupied, 0] = sum_y[occupied] / denom[occupied]
        cent_pos[occupied, 1] = sum_x[occupied] / denom[occupied]

    labels, m = _enforce_connectivity(labels)
    return SuperpixelMap(labels, m)


def group_superpoints(projections, superpixels):
    """Group visible points by the superpixel their projection lands in.

    ``projections`` may be a list of geometry.Projection or an
    (indices, u, v) triple of arrays.  Each point index appears in at most
    one group; points that did not project appear in none.
    """
    if isinstance(projections, tuple):
        idx, u, v = projections
    else:
        idx = np.array([p.point_index for p in projections], dtype=np.int64)
        u = np.array([p.u for p in projections])
        v = np.array([p.v for p in projections])
    h, w = superpixels.labels.shape
    groups = [[] for _ in range(superpixels.num_segments)]
    if idx.size:
        rows = round_pixel(v, h)
        cols = round_pixel(u, w)
        segs = superpixels.labels[rows, cols]
        order = np.argsort(idx, kind="stable")
        for i in order:
            groups[segs[i]].append(int(idx[i]))
    return SuperpointGroups([np.array(g, dtype=np.int64) for g in groups], superpixels.num_segments)


def segment_ids_from_groups(groups, num_rows):
    """Flatten SuperpointGroups into a per-row segment id array (-1 = none)."""
    seg = np.full(num_rows, -1, dtype=np.int64)
    for m, members in enumerate(groups.groups):
        seg[members] = m
    return seg


def pool_normalized_mean(features, segment_ids, num_segments):
    """L2-normalize rows, then mean per segment.

    ``features`` is an (N, C) Tensor (or array); ``segment_ids`` gives the
    segment of each row, -1 for rows outside every segment.  Empty segments
    produce zero rows flagged invalid.
    """
    feats = features if isinstance(features, Tensor) else Tensor(features)
    seg = np.asarray(segment_ids, dtype=np.int64)
    pooled = segment_mean(l2_normalize(feats, axis=1), seg, num_segments)
    counts = np.bincount(seg[seg >= 0], minlength=num_segments)
    return SegmentFeatures(pooled, counts > 0)


def pool_superpixels(feature_map, superpixels):
    """Pool an (H, W, C) feature map over superpixels."""
    h, w = superpixels.labels.shape
    flat = feature_map.reshape((h * w, feature_map.shape[2]))
    return pool_normalized_mean(flat, superpixels.labels.ravel(), superpixels.num_segments)


def pool_superpoints(point_features, groups):
    """Pool per-point features over superpoint groups."""
    n = point_features.shape[0]
    return pool_normalized_mean(point_features, segment_ids_from_groups(groups, n), groups.num_segments)
