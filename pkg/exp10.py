"""exp10: did the softened depth-head init break lr=0.05 convergence?

Depth-only training (both contrastive terms off; depth trajectory is
parameter-disjoint from them), seed 0, lr 0.05. Arms: out_init_scale in
{0.1, 1.0} x steps in {400, 448}. Prints the train depth-loss trajectory
and held-out BCE/MAE per arm.
"""

import time
from dataclasses import replace

from pcdistill.config import build_config
from pcdistill.train import (
    _ROLE_EVAL_SCENE,
    build_models,
    depth_eval,
    make_scenes,
    pretrain,
)

base = build_config({})
base = replace(base, train=replace(base.train, seed=0, enable_ipv=False, enable_bev=False))

train_scenes = make_scenes(base, base.train.n_scenes, 0)
eval_scenes = make_scenes(base, base.train.n_eval_scenes, 0, role=_ROLE_EVAL_SCENE)

for scale in (0.1, 1.0):
    for steps in (400, 448):
        cfg = replace(
            base,
            train=replace(base.train, steps=steps),
            depth_head=replace(base.depth_head, out_init_scale=scale),
        )
        t0 = time.time()
        result = pretrain(cfg, train_scenes)
        models = build_models(cfg)
        models.load_state(result.state)
        bce, base_bce, mae, base_mae = depth_eval(cfg, models, eval_scenes)
        traj = " ".join(
            f"{result.history[i].depth:.2f}" for i in range(0, steps, 50)
        )
        print(
            f"scale={scale:.1f} steps={steps}  eval bce={bce:.3f}/{base_bce:.3f} "
            f"mae={mae:.2f}/{base_mae:.2f}  train depth@50s=[{traj}] "
            f"({time.time() - t0:.0f} s)",
            flush=True,
        )
