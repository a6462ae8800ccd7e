"""Command-line front end.

Subcommands cover the whole workflow: synthetic data generation,
distillation pretraining, linear probing, the ablation sweep, depth-map
rendering, a gradient self-check, and config inspection.

Exit codes: 0 success, 2 usage or malformed config, 3 missing or
unreadable files, 4 numeric failure, 5 corrupt checkpoint.
"""

import argparse
import os
import sys

import numpy as np

from .autodiff import Tensor, finite_difference_check
from .checkpoint import CheckpointFormatError, load_tensors, save_tensors
from .config import ConfigError, PRESETS, build_config, dump_config, parse_config_file
from .geometry import render_sparse_depth_arrays
from .losses import depth_bce_loss, info_nce, PairBatch
from .synth import generate_scene, scene_consistency_check, write_ppm, dump_scene
from .train import (
    NumericError,
    ablation_sweep,
    build_models,
    depth_eval,
    derive_seed,
    history_csv,
    linear_probe,
    make_scenes,
    predict_depth_map,
    pretrain,
    student_feature_fn,
    summarize_sweep,
    sweep_csv,
    _ROLE_EVAL_SCENE,
)

_EXIT_USAGE = 2
_EXIT_IO = 3
_EXIT_NUMERIC = 4
_EXIT_CHECKPOINT = 5


def _load_config(args):
    overrides = {}
    if args.config:
        overrides.update(parse_config_file(args.config))
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return build_config(overrides, preset=args.preset)


def _write_bytes(path, data):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(data)


def _write_text(path, text):
    _write_bytes(path, text.encode())


def cmd_dump_config(args):
    cfg = _load_config(args)
    text = dump_config(cfg)
    if args.out:
        _write_text(args.out, text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth_gen(args):
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.count):
        seed = derive_seed(cfg.train.seed, 0, i)
        scene = generate_scene(cfg.scene, seed)
        path = os.path.join(args.out, f"scene_{i:03d}.bin")
        dump_scene(scene, path)
        report = scene_consistency_check(scene)
        for view in range(scene.num_views):
            ppm = os.path.join(args.out, f"scene_{i:03d}_view{view}.ppm")
            write_ppm(ppm, scene.images[view])
        print(
            f"scene {i}: {len(scene.points)} points, "
            f"max geometric discrepancy {report.max_discrepancy:.3e}, "
            f"{report.violations} texel violations, "
            f"class agreement {report.class_agreement:.4f}"
        )
        if report.violations:
            raise NumericError(f"scene {i} failed its consistency check")
    return 0


def cmd_pretrain(args):
    cfg = _load_config(args)
    result = pretrain(cfg)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.bin")
    save_tensors(ckpt, result.state)
    _write_text(os.path.join(args.out, "history.csv"), history_csv(result.history))
    _write_text(os.path.join(args.out, "config.txt"), dump_config(cfg))
    last = result.history[-1] if result.history else None
    print(f"teacher checksum {result.checksum_before} (unchanged: "
          f"{result.checksum_before == result.checksum_after})")
    if last:
        print(
            f"step {last.step}: total {last.total:.4f} "
            f"(ipv {last.ipv:.4f}, bev {last.bev:.4f}, depth {last.depth:.4f})"
        )
    print(f"wrote {ckpt}")
    return 0


def _load_run(args):
    cfg_path = args.run_config or os.path.join(os.path.dirname(args.checkpoint), "config.txt")
    overrides = parse_config_file(cfg_path)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    cfg = build_config(overrides, preset=args.preset)
    state = load_tensors(args.checkpoint)
    return cfg, state


def cmd_probe(args):
    cfg, state = _load_run(args)
    seed = cfg.train.seed
    train_scenes = make_scenes(cfg, cfg.train.n_scenes, seed)
    eval_scenes = make_scenes(cfg, cfg.train.n_eval_scenes, seed, role=_ROLE_EVAL_SCENE)
    fn = student_feature_fn(cfg, None if args.scratch else state)
    result = linear_probe(fn, train_scenes, eval_scenes, cfg.probe)
    label = "scratch" if args.scratch else "pretrained"
    print(f"{label} probe: mIoU {result.miou:.4f}, fwIoU {result.fwiou:.4f}")
    for cls, iou in enumerate(result.per_class_iou):
        if np.isfinite(iou):
            print(f"  class {cls}: IoU {iou:.4f}")
    return 0


def cmd_sweep(args):
    cfg = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")
    rows = ablation_sweep(cfg, seeds, include_ratio=not args.no_ratio)
    os.makedirs(args.out, exist_ok=True)
    _write_text(os.path.join(args.out, "sweep.csv"), sweep_csv(rows))
    for setting, miou in summarize_sweep(rows).items():
        print(f"{setting}: mean mIoU {miou:.4f}")
    print(f"wrote {os.path.join(args.out, 'sweep.csv')}")
    return 0


def _depth_composite(scene, view, pred, binning):
    """[sparse targets | predicted depth | rgb] as one image row."""
    from .geometry import project_point_arrays

    k = scene.intrinsics[view]
    _, u, v, z = project_point_arrays(scene.points, scene.extrinsics[view], k)
    sparse = render_sparse_depth_arrays(u, v, z, k.width, k.height)
    lo, hi = binning.d_min, binning.d_max

    def shade(depth, valid=None):
        g = np.clip((depth - lo) / (hi - lo), 0.0, 1.0)
        g = 1.0 - g
        if valid is not None:
            g = np.where(valid, g, 0.0)
        return np.repeat(g[:, :, None], 3, axis=2)

    panels = [shade(sparse.depth, sparse.valid), shade(pred), scene.images[view]]
    return np.concatenate(panels, axis=1)


def cmd_render_depth(args):
    cfg, state = _load_run(args)
    models = build_models(cfg)
    models.load_state(state)
    scenes = make_scenes(cfg, args.count, cfg.train.seed, role=_ROLE_EVAL_SCENE)
    os.makedirs(args.out, exist_ok=True)
    for i, scene in enumerate(scenes):
        for view in range(scene.num_views):
            pred = predict_depth_map(cfg, models, scene, view)
            img = _depth_composite(scene, view, pred, cfg.binning)
            write_ppm(os.path.join(args.out, f"depth_{i:03d}_view{view}.ppm"), img)
    bce, uniform_bce, mae, base_mae = depth_eval(cfg, models, scenes)
    print(f"depth BCE {bce:.4f} (uniform predictor {uniform_bce:.4f})")
    print(f"depth MAE {mae:.3f} m (uniform-expectation baseline {base_mae:.3f} m)")
    print(f"wrote composites to {args.out}")
    return 0


def cmd_grad_check(args):
    cfg = _load_config(args)
    rng = np.random.default_rng(args.seed)
    errors = {}

    t = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    s = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    errors["info_nce"] = finite_difference_check(
        lambda a, b: info_nce(PairBatch(a, b), 0.07), [t, s]
    )

    from .encoders import DepthHead as _DepthHead, Encoder2D as _Encoder2D
    from dataclasses import replace as _replace

    small = _replace(cfg.encoder2d, channels=(4, 4), kernels=(3, 3), dilations=(1, 1))
    enc = _Encoder2D(small, seed=0, trainable=True)
    image = rng.random((6, 7, 3))
    k = _replace_intrinsics(cfg, 7, 6)
    head = _DepthHead(cfg.depth_head, small.out_channels, cfg.binning.t, seed=1)
    u = rng.uniform(0, 7, size=12)
    v = rng.uniform(0, 6, size=12)
    z = rng.uniform(cfg.binning.d_min, cfg.binning.d_max, size=12)
    sparse = render_sparse_depth_arrays(u, v, z, 7, 6)

    def depth_path(*params):
        feats = enc.forward(image)
        dist = head.forward(feats, k)
        return depth_bce_loss(dist, sparse, cfg.binning).value

    # A representative parameter slice; checking every element would take
    # minutes without telling us anything new.
    inputs = [
        enc.params["conv0/w"],
        head.params["cam/w1"],
        head.params["block0/w1"],
        head.params["out/b"],
    ]
    errors["depth_pipeline"] = finite_difference_check(depth_path, inputs)

    worst = max(errors.values())
    for name, err in sorted(errors.items()):
        print(f"{name}: max relative gradient error {err:.3e}")
    print(f"worst: {worst:.3e} (tolerance {args.tolerance:.1e})")
    if not np.isfinite(worst) or worst > args.tolerance:
        raise NumericError("gradient check exceeded tolerance")
    return 0


def _replace_intrinsics(cfg, width, height):
    from .geometry import CameraIntrinsics

    base = cfg.scene.intrinsics
    return CameraIntrinsics(base.fx, base.fy, (width - 1) / 2, (height - 1) / 2, width, height)


def _add_config_args(p):
    p.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    p.add_argument("--config", default=None, help="key=value override file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="inline override")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pcdistill",
        description="Hybrid contrastive 2D-to-3D feature distillation on synthetic scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dump-config", help="print the resolved configuration")
    _add_config_args(p)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_dump_config)

    p = sub.add_parser("synth-gen", help="generate and verify synthetic scenes")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=4)
    p.set_defaults(fn=cmd_synth_gen)

    p = sub.add_parser("pretrain", help="run distillation pretraining")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("probe", help="linear-probe a checkpoint's point features")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--run-config", default=None, help="config.txt of the pretraining run")
    p.add_argument("--scratch", action="store_true", help="probe the random init instead")
    p.set_defaults(fn=cmd_probe)

    p = sub.add_parser("sweep", help="ablation and loss-ratio sweep")
    _add_config_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--no-ratio", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("render-depth", help="render predicted depth maps")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--run-config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=2)
    p.set_defaults(fn=cmd_render_depth)

    p = sub.add_parser("grad-check", help="finite-difference gradient self-check")
    _add_config_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(fn=cmd_grad_check)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except CheckpointFormatError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return _EXIT_CHECKPOINT
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return _EXIT_NUMERIC
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return _EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
