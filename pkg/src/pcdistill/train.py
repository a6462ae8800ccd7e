"""Distillation pretraining, linear probing, and the ablation sweep.

``pretrain`` runs the full hybrid pipeline: a frozen random 2-D teacher
encodes augmented image patches, the trainable 3-D student encodes
augmented point clouds, and the two are tied together by a superpixel /
superpoint contrastive term, a BEV-grid contrastive term (via
depth-weighted lifting of image features), and a sparse depth
cross-entropy.  ``linear_probe`` measures how linearly separable the
student's point features are for the scene classes.  ``ablation_sweep``
compares pretraining variants against a random-weight baseline.

All randomness flows from one integer seed through SeedSequence spawn
keys, so every run is bit-reproducible.
"""

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .augment import augment_image, augment_points, adjust_intrinsics, invert_for_bev, project_into_patch
from .bev import PointBevHead, finalize_bev, lift_splat_accumulate
from .encoders import DepthHead, Encoder2D, Encoder3D
from .geometry import bin_centers, render_sparse_depth_arrays
from .losses import bev_pair_batch, concat_pair_batches, depth_bce_loss, info_nce, ipv_pair_batch, total_loss
from .optim import SGD, cosine_lr
from .superpixel import group_superpoints, pool_superpixels, pool_superpoints, slic_segment
from .synth import generate_scene


class NumericError(RuntimeError):
    """A loss or gradient stopped being finite."""


# SeedSequence spawn-key roles, so independent streams never collide.
_ROLE_SCENE = 0
_ROLE_INIT = 1
_ROLE_POINT_AUG = 2
_ROLE_IMAGE_AUG = 3
_ROLE_ORDER = 4
_ROLE_EVAL_SCENE = 5


def derive_seed(base, *key):
    ss = np.random.SeedSequence(int(base), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


def make_scenes(config, count, base_seed, role=_ROLE_SCENE):
    return [generate_scene(config.scene, derive_seed(base_seed, role, i)) for i in range(count)]


@dataclass
class Models:
    teacher: Encoder2D
    student: Encoder3D
    depth_head: DepthHead
    bev_head: PointBevHead

    def state(self):
        out = {}
        out.update(self.teacher.state("teacher/"))
        out.update(self.student.state("student/"))
        out.update(self.depth_head.state("depth/"))
        out.update(self.bev_head.state("bevhead/"))
        return out

    def load_state(self, arrays):
        self.teacher.load_state(arrays, "teacher/")
        self.student.load_state(arrays, "student/")
        self.depth_head.load_state(arrays, "depth/")
        self.bev_head.load_state(arrays, "bevhead/")

    def trainable_params(self):
        params = {}
        for prefix, module in (
            ("student/", self.student),
            ("depth/", self.depth_head),
            ("bevhead/", self.bev_head),
        ):
            for name, t in module.params.items():
                params[prefix + name] = t
        return params


def build_models(config):
    seed = config.train.seed
    teacher = Encoder2D(config.encoder2d, derive_seed(seed, _ROLE_INIT, 0), trainable=False)
    student = Encoder3D(config.encoder3d, derive_seed(seed, _ROLE_INIT, 1))
    depth_head = DepthHead(
        config.depth_head,
        config.encoder2d.out_channels,
        config.binning.t,
        derive_seed(seed, _ROLE_INIT, 2),
    )
    bev_head = PointBevHead(
        config.bev,
        config.encoder3d.grid.dims,
        config.encoder3d.out_channels,
        derive_seed(seed, _ROLE_INIT, 3),
    )
    return Models(teacher, student, depth_head, bev_head)


def teacher_checksum(teacher):
    """SHA-256 over the teacher parameters in name order."""
    digest = hashlib.sha256()
    for name in sorted(teacher.params):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(teacher.params[name].data, dtype="<f8").tobytes())
    return digest.hexdigest()


@dataclass
class StepStats:
    step: int
    lr: float
    total: float
    ipv: float
    bev: float
    depth: float
    ipv_pairs: int
    bev_pairs: int
    depth_pixels: int


@dataclass
class PretrainResult:
    state: dict
    history: list
    checksum_before: str
    checksum_after: str
    config: object


def _scene_step_terms(config, models, scene, scene_id, step, compute_ipv, compute_bev, compute_depth):
    """Forward one scene: returns (ipv batches, bev batches, depth terms)."""
    seed = config.train.seed
    cloud = scene.cloud()
    aug_cloud, rec_p = augment_points(cloud, derive_seed(seed, _ROLE_POINT_AUG, step, scene_id), config.augment)
    point_feats, voxel_feats, occupancy = models.student.forward(aug_cloud.points)

    ipv_batches, depth_terms = [], []
    bev_acc, bev_mass = None, None
    for view in range(scene.num_views):
        img_seed = derive_seed(seed, _ROLE_IMAGE_AUG, step, scene_id, view)
        patch, rec_i = augment_image(scene.images[view], img_seed, config.augment)
        k_patch = adjust_intrinsics(rec_i, scene.intrinsics[view])
        feats_2d = models.teacher.forward(patch)

        depth_dist = None
        if compute_depth or compute_bev:
            depth_dist = models.depth_head.forward(feats_2d, k_patch)
        if compute_depth:
            _, u_all, v_all, z_all = project_into_patch(
                cloud.points, scene.extrinsics[view], scene.intrinsics[view], rec_i
            )
            sparse = render_sparse_depth_arrays(u_all, v_all, z_all, k_patch.width, k_patch.height)
            depth_terms.append(depth_bce_loss(depth_dist, sparse, config.binning))
        if compute_ipv:
            smap = slic_segment(
                patch,
                config.train.slic_segments,
                config.train.slic_compactness,
                config.train.slic_iterations,
            )
            surviving = cloud.points[rec_p.kept_indices]
            idx, u, v, _ = project_into_patch(
                surviving, scene.extrinsics[view], scene.intrinsics[view], rec_i
            )
            groups = group_superpoints((idx, u, v), smap)
            seg_img = pool_superpixels(feats_2d, smap)
            seg_pts = pool_superpoints(point_feats, groups)
            ipv_batches.append(ipv_pair_batch(seg_img, seg_pts, tag=(scene_id, view)))
        if compute_bev:
            acc, mass = lift_splat_accumulate(
                feats_2d,
                depth_dist,
                k_patch,
                scene.extrinsics[view],
                config.bev,
                config.binning,
                hflip=rec_i.hflip,
            )
            bev_acc = acc if bev_acc is None else ad.add(bev_acc, acc)
            bev_mass = mass if bev_mass is None else bev_mass + mass

    bev_batches = []
    if compute_bev:
        image_bev = finalize_bev(bev_acc, bev_mass, config.bev)
        point_bev = models.bev_head.forward(voxel_feats, occupancy)
        point_bev = invert_for_bev(rec_p, point_bev)
        bev_batches.append(bev_pair_batch(image_bev, point_bev, tag=scene_id))
    return ipv_batches, bev_batches, depth_terms


def _mean_terms(terms):
    values = [t.value for t in terms if not t.degenerate]
    if not values:
        return None, 0
    acc = values[0]
    for v in values[1:]:
        acc = ad.add(acc, v)
    count = sum(t.count for t in terms)
    return ad.mul(acc, 1.0 / len(values)), count


def pretrain(config, scenes=None):
    """Run the distillation loop; returns parameters and loss history."""
    tc = config.train
    if scenes is None:
        scenes = make_scenes(config, tc.n_scenes, tc.seed)
    models = build_models(config)
    checksum_before = teacher_checksum(models.teacher)

    loss_cfg = config.loss
    compute_ipv = tc.enable_ipv and loss_cfg.alpha > 0.0
    compute_bev = tc.enable_bev and loss_cfg.beta > 0.0
    compute_depth = loss_cfg.gamma > 0.0

    batches_per_epoch = max(1, int(np.ceil(len(scenes) / tc.batch_size)))
    total_steps = tc.steps if tc.steps >= 0 else tc.epochs * batches_per_epoch

    opt = SGD(models.trainable_params(), tc.momentum, tc.weight_decay)
    history = []
    order = None
    for step in range(total_steps):
        epoch, slot = divmod(step, batches_per_epoch)
        if slot == 0:
            rng = np.random.default_rng(derive_seed(tc.seed, _ROLE_ORDER, epoch))
            order = rng.permutation(len(scenes))
        batch_ids = order[slot * tc.batch_size : (slot + 1) * tc.batch_size]

        ipv_batches, bev_batches, depth_terms = [], [], []
        for scene_id in batch_ids:
            i_b, b_b, d_t = _scene_step_terms(
                config, models, scenes[scene_id], int(scene_id), step,
                compute_ipv, compute_bev, compute_depth,
            )
            ipv_batches.extend(i_b)
            bev_batches.extend(b_b)
            depth_terms.extend(d_t)

        ipv_pairs = bev_pairs = depth_pixels = 0
        l_ipv = l_bev = l_depth = 0.0
        if compute_ipv:
            merged = concat_pair_batches(ipv_batches)
            if merged is not None:
                l_ipv = info_nce(merged, loss_cfg.tau_ipv)
                ipv_pairs = merged.num_pairs
        if compute_bev:
            merged = concat_pair_batches(bev_batches)
            if merged is not None:
                l_bev = info_nce(merged, loss_cfg.tau_bev)
                bev_pairs = merged.num_pairs
        if compute_depth:
            mean_depth, depth_pixels = _mean_terms(depth_terms)
            if mean_depth is not None:
                l_depth = mean_depth

        loss = total_loss(l_ipv, l_bev, l_depth, loss_cfg)
        for name, term in (("ipv", l_ipv), ("bev", l_bev), ("depth", l_depth)):
            val = float(term.data) if isinstance(term, ad.Tensor) else float(term)
            if not np.isfinite(val):
                raise NumericError(f"{name} loss became non-finite at step {step}")

        lr = cosine_lr(step, total_steps, tc.lr0)
        if loss.requires_grad:
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
        history.append(
            StepStats(
                step,
                lr,
                float(loss.data),
                float(l_ipv.data) if isinstance(l_ipv, ad.Tensor) else 0.0,
                float(l_bev.data) if isinstance(l_bev, ad.Tensor) else 0.0,
                float(l_depth.data) if isinstance(l_depth, ad.Tensor) else 0.0,
                ipv_pairs,
                bev_pairs,
                depth_pixels,
            )
        )

    checksum_after = teacher_checksum(models.teacher)
    if checksum_after != checksum_before:
        raise NumericError("teacher parameters changed during pretraining")
    return PretrainResult(models.state(), history, checksum_before, checksum_after, config)


# -- evaluation ---------------------------------------------------------------


def confusion_matrix(truth, pred, n_classes):
    idx = truth * n_classes + pred
    return np.bincount(idx, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def iou_metrics(conf):
    """(per-class IoU with NaN for absent classes, mIoU, fwIoU).

    A class missing from the ground truth is excluded from both averages;
    classes present in truth but never predicted correctly count as zero.
    """
    truth_count = conf.sum(axis=1)
    pred_count = conf.sum(axis=0)
    diag = np.diag(conf).astype(np.float64)
    union = truth_count + pred_count - diag
    present = truth_count > 0
    iou = np.full(conf.shape[0], np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        iou[present] = diag[present] / union[present]
    miou = float(iou[present].mean()) if present.any() else 0.0
    weights = truth_count[present].astype(np.float64)
    fwiou = float((iou[present] * weights).sum() / weights.sum()) if present.any() else 0.0
    return iou, miou, fwiou


@dataclass
class ProbeResult:
    miou: float
    fwiou: float
    per_class_iou: np.ndarray
    confusion: np.ndarray


def linear_probe(feature_fn, train_scenes, eval_scenes, probe_cfg, n_classes=4):
    """Fit one linear layer on frozen features, report IoU on eval scenes.

    ``feature_fn(scene) -> (N, C)`` supplies the frozen representation;
    labels come from the scenes.  Training is full-batch softmax
    cross-entropy with momentum SGD, deterministic from a zero init.
    """
    x_train = np.concatenate([feature_fn(s) for s in train_scenes])
    y_train = np.concatenate([s.labels for s in train_scenes])
    if probe_cfg.standardize:
        mean = x_train.mean(axis=0)
        std = x_train.std(axis=0)
        std = np.where(std > 1e-8, std, 1.0)
    else:
        mean, std = 0.0, 1.0
    x = (x_train - mean) / std

    n, c = x.shape
    w = np.zeros((c, n_classes))
    b = np.zeros(n_classes)
    vw = np.zeros_like(w)
    vb = np.zeros_like(b)
    onehot = np.eye(n_classes)[y_train]
    for it in range(probe_cfg.iters):
        logits = x @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / n
        gw = x.T @ g
        gb = g.sum(axis=0)
        lr = cosine_lr(it, probe_cfg.iters, probe_cfg.lr)
        vw = probe_cfg.momentum * vw + gw
        vb = probe_cfg.momentum * vb + gb
        w -= lr * vw
        b -= lr * vb

    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    for s in eval_scenes:
        feats = (feature_fn(s) - mean) / std
        pred = np.argmax(feats @ w + b, axis=1)
        conf += confusion_matrix(s.labels, pred, n_classes)
    iou, miou, fwiou = iou_metrics(conf)
    return ProbeResult(miou, fwiou, iou, conf)


def student_feature_fn(config, state=None):
    """Point-feature extractor for probing: the (possibly loaded) student
    applied to unaugmented clouds."""
    student = Encoder3D(config.encoder3d, derive_seed(config.train.seed, _ROLE_INIT, 1))
    if state is not None:
        student.load_state(state, "student/")

    def fn(scene):
        feats, _, _ = student.forward(scene.points)
        return feats.data

    return fn


# -- ablation sweep -----------------------------------------------------------

SWEEP_SETTINGS = ("scratch", "ipv-only", "bev-only", "hybrid")


@dataclass
class SweepRow:
    setting: str
    seed: int
    alpha: float
    beta: float
    miou: float
    fwiou: float


def _setting_config(config, setting):
    tc, lc = config.train, config.loss
    if setting == "scratch":
        return replace(config, train=replace(tc, steps=0))
    if setting == "ipv-only":
        return replace(
            config,
            train=replace(tc, enable_ipv=True, enable_bev=False),
            loss=replace(lc, gamma=0.0),
        )
    if setting == "bev-only":
        return replace(config, train=replace(tc, enable_ipv=False, enable_bev=True))
    if setting == "hybrid":
        return replace(config, train=replace(tc, enable_ipv=True, enable_bev=True))
    raise ValueError(f"unknown sweep setting {setting}")


def ablation_sweep(config, seeds, include_ratio=True, ratio_steps=None):
    """Pretrain+probe over view settings and the contrastive-ratio grid.

    Every setting shares the per-seed scene pool and model init, so rows
    are directly comparable; ``scratch`` probes the untouched random
    student.  Ratio rows run on the first seed only.
    """
    from .losses import RATIO_GRID

    rows = []
    for seed in seeds:
        seeded = replace(config, train=replace(config.train, seed=int(seed)))
        train_scenes = make_scenes(seeded, seeded.train.n_scenes, seed)
        eval_scenes = make_scenes(seeded, seeded.train.n_eval_scenes, seed, role=_ROLE_EVAL_SCENE)
        for setting in SWEEP_SETTINGS:
            scfg = _setting_config(seeded, setting)
            result = pretrain(scfg, train_scenes)
            probe = linear_probe(
                student_feature_fn(scfg, result.state), train_scenes, eval_scenes, scfg.probe
            )
            rows.append(
                SweepRow(setting, int(seed), scfg.loss.alpha, scfg.loss.beta, probe.miou, probe.fwiou)
            )
    if include_ratio:
        seed = int(seeds[0])
        seeded = replace(config, train=replace(config.train, seed=seed))
        if ratio_steps is not None:
            seeded = replace(seeded, train=replace(seeded.train, steps=int(ratio_steps)))
        train_scenes = make_scenes(seeded, seeded.train.n_scenes, seed)
        eval_scenes = make_scenes(seeded, seeded.train.n_eval_scenes, seed, role=_ROLE_EVAL_SCENE)
        for alpha, beta in RATIO_GRID:
            rcfg = replace(seeded, loss=replace(seeded.loss, alpha=alpha, beta=beta))
            result = pretrain(rcfg, train_scenes)
            probe = linear_probe(
                student_feature_fn(rcfg, result.state), train_scenes, eval_scenes, rcfg.probe
            )
            rows.append(SweepRow(f"ratio-{alpha:g}:{beta:g}", seed, alpha, beta, probe.miou, probe.fwiou))
    return rows


def summarize_sweep(rows):
    """Mean mIoU per setting, aligned for printing."""
    by_setting = {}
    for r in rows:
        by_setting.setdefault(r.setting, []).append(r.miou)
    return {k: float(np.mean(v)) for k, v in by_setting.items()}


# -- depth rendering and evaluation -------------------------------------------


def predict_depth_map(config, models, scene, view):
    """Argmax-bin depth prediction for one unaugmented view."""
    feats = models.teacher.forward(scene.images[view])
    dist = models.depth_head.forward(feats, scene.intrinsics[view])
    centers = bin_centers(config.binning)
    return centers[np.argmax(dist.probs.data, axis=2)]


def depth_eval(config, models, scenes):
    """Held-out depth quality: (mean BCE, uniform-baseline BCE, MAE,
    uniform-expectation MAE)."""
    from .geometry import project_point_arrays

    bce_terms = []
    mae_num = mae_base = mae_count = 0.0
    uniform_expect = float(bin_centers(config.binning).mean())
    for scene in scenes:
        for view in range(scene.num_views):
            feats = models.teacher.forward(scene.images[view])
            dist = models.depth_head.forward(feats, scene.intrinsics[view])
            k = scene.intrinsics[view]
            _, u, v, z = project_point_arrays(scene.points, scene.extrinsics[view], k)
            sparse = render_sparse_depth_arrays(u, v, z, k.width, k.height)
            bce_terms.append(depth_bce_loss(dist, sparse, config.binning))
            pred = bin_centers(config.binning)[np.argmax(dist.probs.data, axis=2)]
            gt = scene.depth_maps[view]
            mae_num += float(np.abs(pred - gt).sum())
            mae_base += float(np.abs(uniform_expect - gt).sum())
            mae_count += gt.size
    mean_bce = float(np.mean([t.value.data for t in bce_terms if not t.degenerate]))
    t = config.binning.t
    uniform_bce = -np.log(1.0 / t) - (t - 1) * np.log(1.0 - 1.0 / t)
    return mean_bce, float(uniform_bce), mae_num / mae_count, mae_base / mae_count


# -- CSV emission -------------------------------------------------------------


def history_csv(history):
    lines = ["step,lr,total,ipv,bev,depth,ipv_pairs,bev_pairs,depth_pixels"]
    for h in history:
        lines.append(
            f"{h.step},{h.lr!r},{h.total!r},{h.ipv!r},{h.bev!r},{h.depth!r},"
            f"{h.ipv_pairs},{h.bev_pairs},{h.depth_pixels}"
        )
    return "\n".join(lines) + "\n"


def sweep_csv(rows):
    lines = ["setting,seed,alpha,beta,miou,fwiou"]
    for r in rows:
        lines.append(f"{r.setting},{r.seed},{r.alpha!r},{r.beta!r},{r.miou!r},{r.fwiou!r}")
    return "\n".join(lines) + "\n"
