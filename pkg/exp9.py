"""exp9: margin levers at seed 0, 448 steps.

Arms (scratch probe shared; augments and lr touch pretraining only):
  A control      lr 0.05, default augments     ipv + bev + hybrid
  B mild-augment lr 0.05, gentler profile      bev + hybrid
  C hotter-lr    lr 0.07, default augments     bev + hybrid

Prints margins per arm plus hybrid held-out depth BCE (stability check).
"""

import math
import time
from dataclasses import replace

from pcdistill.config import build_config
from pcdistill.train import (
    _ROLE_EVAL_SCENE,
    _setting_config,
    build_models,
    depth_eval,
    linear_probe,
    make_scenes,
    pretrain,
    student_feature_fn,
)

base = build_config({})
base = replace(base, train=replace(base.train, steps=448, seed=0))

mild = replace(
    base.augment,
    rotation_range=(-math.pi / 4, math.pi / 4),
    drop_prob=0.5,
    drop_size_range=(1.0, 3.0),
    crop_scale_range=(0.85, 1.0),
)

train_scenes = make_scenes(base, base.train.n_scenes, 0)
eval_scenes = make_scenes(base, base.train.n_eval_scenes, 0, role=_ROLE_EVAL_SCENE)

scratch = linear_probe(student_feature_fn(base, None), train_scenes, eval_scenes, base.probe)
print(f"scratch miou={scratch.miou:.4f}", flush=True)

ARMS = {
    "A-control": (base, ("ipv-only", "bev-only", "hybrid")),
    "B-mild-aug": (replace(base, augment=mild), ("bev-only", "hybrid")),
    "C-lr0.07": (replace(base, train=replace(base.train, lr0=0.07)), ("bev-only", "hybrid")),
}

for arm, (cfg, settings) in ARMS.items():
    for setting in settings:
        scfg = _setting_config(cfg, setting)
        t0 = time.time()
        result = pretrain(scfg, train_scenes)
        probe = linear_probe(
            student_feature_fn(scfg, result.state), train_scenes, eval_scenes, scfg.probe
        )
        line = (
            f"{arm:10} {setting:8} miou={probe.miou:.4f} "
            f"margin={probe.miou - scratch.miou:+.4f} ({time.time() - t0:.0f} s)"
        )
        if setting == "hybrid":
            models = build_models(scfg)
            models.load_state(result.state)
            bce, base_bce, mae, base_mae = depth_eval(scfg, models, eval_scenes)
            line += f"  depth bce={bce:.3f}/{base_bce:.3f} mae={mae:.2f}/{base_mae:.2f}"
        print(line, flush=True)
