import time
import numpy as np
from dataclasses import replace
from pcdistill.config import build_config
from pcdistill import train as T

base = build_config({})

print("== phase A: full sweep, lr=0.35 steps=320 seeds 0-2 ==", flush=True)
cfg = replace(base, train=replace(base.train, steps=320, lr0=0.35))
t0 = time.time()
rows = T.ablation_sweep(cfg, (0, 1, 2), include_ratio=False)
elapsed = time.time() - t0
for r in rows:
    print(f"  {r.setting:9s} seed={r.seed} mIoU={r.miou:.4f} fwIoU={r.fwiou:.4f}", flush=True)
means = T.summarize_sweep(rows)
print(f"means: {means}", flush=True)
print(
    f"margins: hybrid={means['hybrid']-means['scratch']:+.4f} "
    f"ipv={means['ipv-only']-means['scratch']:+.4f} "
    f"bev={means['bev-only']-means['scratch']:+.4f} "
    f"elapsed={elapsed:.0f}s",
    flush=True,
)

print("== phase B: depth after 400 hybrid steps, lr=0.35 ==", flush=True)
cfg = replace(base, train=replace(base.train, steps=400, lr0=0.35))
t0 = time.time()
res = T.pretrain(cfg)
models = T.build_models(cfg)
models.load_state(res.state)
ev = T.make_scenes(cfg, cfg.train.n_eval_scenes, cfg.train.seed, role=T._ROLE_EVAL_SCENE)
bce, ubce, mae, base_mae = T.depth_eval(cfg, models, ev)
print(
    f"depth: bce={bce:.4f} uniform={ubce:.4f} reduction={1-bce/ubce:.1%} "
    f"mae={mae:.3f} base_mae={base_mae:.3f} elapsed={time.time()-t0:.0f}s",
    flush=True,
)
