import time
from dataclasses import replace

from pcdistill.config import build_config
from pcdistill import train as T

base = build_config({})

# E2: hybrid, lr=0.2, 400 steps, seed 0. Criterion-4 depth numbers plus the
# hybrid probe margin at more steps.
cfg = replace(base, train=replace(base.train, steps=400, lr0=0.2))
t0 = time.time()
res = T.pretrain(cfg)
print(f"pretrain 400@0.2 done in {time.time()-t0:.0f}s", flush=True)
models = T.build_models(cfg)
models.load_state(res.state)
train_scenes = T.make_scenes(cfg, cfg.train.n_scenes, cfg.train.seed, role=T._ROLE_SCENE)
eval_scenes = T.make_scenes(cfg, cfg.train.n_eval_scenes, cfg.train.seed, role=T._ROLE_EVAL_SCENE)
bce, ubce, mae, bmae = T.depth_eval(cfg, models, eval_scenes)
print(f"depth eval : bce={bce:.4f} uniform={ubce:.4f} red={1-bce/ubce:.1%} mae={mae:.3f} base={bmae:.3f}", flush=True)
bce_t, _, mae_t, _ = T.depth_eval(cfg, models, train_scenes)
print(f"depth train: bce={bce_t:.4f} red={1-bce_t/ubce:.1%} mae={mae_t:.3f}", flush=True)

feat_hybrid = T.student_feature_fn(cfg, res.state)
feat_scratch = T.student_feature_fn(cfg, None)

for iters in (300, 1000):
    pc = replace(base.probe, iters=iters)
    t0 = time.time()
    pr_s = T.linear_probe(feat_scratch, train_scenes, eval_scenes, pc)
    pr_h = T.linear_probe(feat_hybrid, train_scenes, eval_scenes, pc)
    print(
        f"probe iters={iters:4d}: scratch={pr_s.miou:.4f} hybrid={pr_h.miou:.4f} "
        f"margin={pr_h.miou-pr_s.miou:+.4f} ({time.time()-t0:.0f}s for 2 probes)",
        flush=True,
    )
