import time
from dataclasses import replace

import numpy as np

from pcdistill.config import build_config
from pcdistill import train as T

CLASSES = ("ground", "wall", "box", "cylinder")
base = build_config({})


def probe_setting(cfg, setting):
    scfg = T._setting_config(cfg, setting)
    res = T.pretrain(scfg)
    feats = T.student_feature_fn(cfg, res.state)
    tr = T.make_scenes(cfg, cfg.train.n_scenes, cfg.train.seed, role=T._ROLE_SCENE)
    ev = T.make_scenes(cfg, cfg.train.n_eval_scenes, cfg.train.seed, role=T._ROLE_EVAL_SCENE)
    pr = T.linear_probe(feats, tr, ev, cfg.probe)
    per = " ".join(f"{c}={v:.3f}" for c, v in zip(CLASSES, pr.per_class_iou))
    print(f"  {setting:9s} mIoU={pr.miou:.4f} [{per}]", flush=True)
    return pr.miou


for steps in (400, 448):
    cfg = replace(base, train=replace(base.train, steps=steps, lr0=0.05))
    print(f"== steps={steps} lr=0.05 seed=0 ==", flush=True)
    t0 = time.time()
    base_miou = probe_setting(cfg, "scratch")
    for setting in ("bev-only", "hybrid"):
        m = probe_setting(cfg, setting)
        print(f"    margin {setting}: {m-base_miou:+.4f}", flush=True)
    print(f"  elapsed {time.time()-t0:.0f}s", flush=True)
