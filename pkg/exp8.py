"""exp8: does inverse-frequency probe weighting revive the dead cylinder class?

Pretrain hybrid once (448 steps, default lr 0.05, seed 0); probe scratch and
hybrid features with class_balance off and on; print per-class IoUs.
"""

import time
from dataclasses import replace

from pcdistill.config import build_config
from pcdistill.train import (
    _ROLE_EVAL_SCENE,
    _setting_config,
    linear_probe,
    make_scenes,
    pretrain,
    student_feature_fn,
)

cfg = build_config({})
cfg = replace(cfg, train=replace(cfg.train, steps=448))
seed = 0
cfg = replace(cfg, train=replace(cfg.train, seed=seed))

train_scenes = make_scenes(cfg, cfg.train.n_scenes, seed)
eval_scenes = make_scenes(cfg, cfg.train.n_eval_scenes, seed, role=_ROLE_EVAL_SCENE)

t0 = time.time()
hybrid_cfg = _setting_config(cfg, "hybrid")
result = pretrain(hybrid_cfg, train_scenes)
print(f"pretrain done in {time.time() - t0:.0f} s", flush=True)

feats = {
    "scratch": student_feature_fn(cfg, None),
    "hybrid": student_feature_fn(hybrid_cfg, result.state),
}

for balance in (False, True):
    pcfg = replace(cfg.probe, class_balance=balance)
    for name, fn in feats.items():
        probe = linear_probe(fn, train_scenes, eval_scenes, pcfg)
        ious = " ".join(f"{v:.3f}" for v in probe.per_class_iou)
        print(
            f"balance={balance!s:5}  {name:7}  miou={probe.miou:.4f}  "
            f"fwiou={probe.fwiou:.4f}  per-class=[{ious}]",
            flush=True,
        )

for balance in (False, True):
    pcfg = replace(cfg.probe, class_balance=balance)
    m_s = linear_probe(feats["scratch"], train_scenes, eval_scenes, pcfg).miou
    m_h = linear_probe(feats["hybrid"], train_scenes, eval_scenes, pcfg).miou
    print(f"balance={balance!s:5}  hybrid-scratch margin = {m_h - m_s:+.4f}")
