"""Contrastive and depth objectives.

Both contrastive terms are single-direction InfoNCE anchored on the
teacher rows: for paired rows (t_k, s_k),

    loss = -(1/P) * sum_k log( exp(t_k . s_k / tau) / sum_i exp(t_k . s_i / tau) )

so every student row in the batch serves as a negative for every anchor.
The depth term is a binary cross-entropy against one-hot depth bins on
pixels that received LiDAR supervision.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bev import nonzero_grid_indices
from .geometry import discretize_depth

_PROB_CLAMP = 1e-7


@dataclass
class PairBatch:
    """Aligned teacher/student feature rows plus provenance tags.

    ``tags`` is a list of arbitrary hashable identifiers (scene, view,
    segment or cell) kept for debugging; it never enters the math.
    """

    teacher: Tensor
    student: Tensor
    tags: list = field(default_factory=list)

    def __post_init__(self):
        if self.teacher.shape != self.student.shape:
            raise ValueError("teacher and student rows must align")
        if len(self.teacher.shape) != 2:
            raise ValueError("expected (P, C) feature rows")
        if self.tags and len(self.tags) != self.teacher.shape[0]:
            raise ValueError("one tag per pair required")

    @property
    def num_pairs(self):
        return self.teacher.shape[0]


def concat_pair_batches(batches):
    batches = [b for b in batches if b.num_pairs > 0]
    if not batches:
        return None
    if len(batches) == 1:
        return batches[0]
    tags = []
    for b in batches:
        tags.extend(b.tags if b.tags else [None] * b.num_pairs)
    return PairBatch(
        ad.concat([b.teacher for b in batches], axis=0),
        ad.concat([b.student for b in batches], axis=0),
        tags,
    )


@dataclass
class LossTerm:
    """A scalar objective plus how much evidence produced it."""

    value: Tensor
    count: int
    degenerate: bool = False


def info_nce(batch, tau):
    """Teacher-anchored InfoNCE over one PairBatch."""
    if tau <= 0.0:
        raise ValueError("temperature must be positive")
    if batch is None or batch.num_pairs == 0:
        raise ValueError("empty pair batch")
    if not np.isfinite(batch.teacher.data).all() or not np.isfinite(batch.student.data).all():
        raise ValueError("non-finite features in pair batch")
    p = batch.num_pairs
    logits = ad.mul(ad.matmul(batch.teacher, batch.student.T), 1.0 / tau)
    eye = Tensor(np.eye(p))
    positives = ad.tsum(ad.mul(logits, eye), axis=1)
    lse = ad.logsumexp(logits, axis=1)
    return ad.tmean(lse - positives)


def ipv_pair_batch(superpixel_feats, superpoint_feats, pairing=None, tag=None):
    """Rows for segments that pooled features on both sides.

    ``pairing`` optionally restricts to explicit segment ids; by default
    every segment valid in both views pairs up.
    """
    if pairing is None:
        pairing = np.nonzero(superpixel_feats.valid & superpoint_feats.valid)[0]
    else:
        pairing = np.asarray(pairing, dtype=np.int64)
    if pairing.size == 0:
        return PairBatch(Tensor(np.zeros((0, 1))), Tensor(np.zeros((0, 1))))
    t = ad.gather_rows(superpixel_feats.features, pairing)
    s = ad.gather_rows(superpoint_feats.features, pairing)
    return PairBatch(t, s, [(tag, int(m)) for m in pairing])


def ipv_loss(superpixel_feats, superpoint_feats, pairing=None, tau=0.07):
    """Image-to-point contrastive loss over pooled segment features.

    Accepts one SegmentFeatures pair or parallel sequences of them (a
    batch); an empty pairing yields a zero, gradient-free LossTerm flagged
    degenerate.
    """
    if isinstance(superpixel_feats, (list, tuple)):
        pairings = pairing if pairing is not None else [None] * len(superpixel_feats)
        batch = concat_pair_batches(
            [
                ipv_pair_batch(a, b, pr, tag=i)
                for i, (a, b, pr) in enumerate(zip(superpixel_feats, superpoint_feats, pairings))
            ]
        )
    else:
        batch = ipv_pair_batch(superpixel_feats, superpoint_feats, pairing)
        if batch.num_pairs == 0:
            batch = None
    if batch is None:
        return LossTerm(Tensor(0.0), 0, degenerate=True)
    return LossTerm(info_nce(batch, tau), batch.num_pairs)


def bev_pair_batch(image_bev, point_bev, tag=None):
    """Rows for cells occupied in the point-cloud BEV map.

    Selection is driven purely by the point map's mask, so adding empty
    point cells cannot change the batch.
    """
    if image_bev.grid != point_bev.grid:
        raise ValueError("BEV maps live on different grids")
    cells = nonzero_grid_indices(point_bev)
    if not cells:
        return PairBatch(Tensor(np.zeros((0, 1))), Tensor(np.zeros((0, 1))))
    rows, cols, c = image_bev.features.shape
    flat_idx = np.array([i * cols + j for i, j in cells], dtype=np.int64)
    t = ad.gather_rows(image_bev.features.reshape((rows * cols, c)), flat_idx)
    s = ad.gather_rows(point_bev.features.reshape((rows * cols, c)), flat_idx)
    return PairBatch(t, s, [(tag, ij) for ij in cells])


def bev_loss(image_bev, point_bev, tau=0.07):
    """Grid-to-grid contrastive loss on cells the point map occupies."""
    batch = bev_pair_batch(image_bev, point_bev)
    if batch.num_pairs == 0:
        return LossTerm(Tensor(0.0), 0, degenerate=True)
    return LossTerm(info_nce(batch, tau), batch.num_pairs)


def depth_bce_loss(pred, target, binning):
    """Binary cross-entropy against one-hot depth bins.

    ``pred`` is a DepthDistribution, ``target`` a SparseDepthMap; only
    pixels with valid sparse depth contribute.  Probabilities are clamped
    to [1e-7, 1 - 1e-7] before the logs.
    """
    probs = pred.probs
    h, w, t = probs.shape
    if target.depth.shape != (h, w):
        raise ValueError("depth map size mismatch")
    mask = target.valid
    n_sup = int(mask.sum())
    if n_sup == 0:
        return LossTerm(Tensor(0.0), 0, degenerate=True)
    target_bin = np.zeros((h, w), dtype=np.int64)
    target_bin[mask] = discretize_depth(target.depth[mask], binning)
    onehot = np.zeros((h, w, t))
    onehot[np.nonzero(mask)[0], np.nonzero(mask)[1], target_bin[mask]] = 1.0

    clamped = ad.clip(probs, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    log_p = ad.tlog(clamped)
    log_not_p = ad.tlog(ad.add(1.0, ad.neg(clamped)))
    per_bin = ad.add(ad.mul(log_p, Tensor(onehot)), ad.mul(log_not_p, Tensor(1.0 - onehot)))
    masked = ad.mul(per_bin, Tensor(mask.astype(np.float64)[:, :, None]))
    total = ad.tsum(masked)
    return LossTerm(ad.mul(total, -1.0 / n_sup), n_sup)


@dataclass(frozen=True)
class LossConfig:
    tau_ipv: float = 0.07
    tau_bev: float = 0.07
    alpha: float = 0.25
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.tau_ipv <= 0.0 or self.tau_bev <= 0.0:
            raise ValueError("temperatures must be positive")
        if min(self.alpha, self.beta, self.gamma) < 0.0:
            raise ValueError("loss weights must be non-negative")


# Published weightings: the reference setting and the best-performing
# contrastive ratio from the weighting sweep.
LOSS_PRESETS = {
    "reference": LossConfig(alpha=0.25, beta=1.0, gamma=1.0),
    "ratio-best": LossConfig(alpha=4.0, beta=1.0, gamma=1.0),
}

# Contrastive weight ratios (alpha : beta) covered by the sweep command.
RATIO_GRID = ((4.0, 1.0), (2.0, 1.0), (1.0, 1.0), (1.0, 2.0))


def total_loss(l_ipv, l_bev, l_depth, config):
    """alpha * ipv + beta * bev + gamma * depth, on the autodiff tape."""

    def term(x, w):
        v = x.value if isinstance(x, LossTerm) else x
        v = v if isinstance(v, Tensor) else Tensor(float(v))
        return ad.mul(v, w)

    return ad.add(
        ad.add(term(l_ipv, config.alpha), term(l_bev, config.beta)),
        term(l_depth, config.gamma),
    )
