import time
from dataclasses import replace

from pcdistill.config import build_config
from pcdistill import train as T

base = build_config({})

for lr in (0.35, 0.2, 0.1):
    cfg = replace(
        base,
        loss=replace(base.loss, alpha=0.0, beta=0.0, gamma=1.0),
        train=replace(base.train, steps=400, lr0=lr, enable_ipv=False, enable_bev=False),
    )
    t0 = time.time()
    res = T.pretrain(cfg)
    hist = res.history
    line = " ".join(f"{s.step}:{s.depth:.2f}" for s in hist if s.step % 50 == 0 or s.step == len(hist) - 1)
    models = T.build_models(cfg)
    models.load_state(res.state)
    ev = T.make_scenes(cfg, cfg.train.n_eval_scenes, cfg.train.seed, role=T._ROLE_EVAL_SCENE)
    bce, ubce, mae, bmae = T.depth_eval(cfg, models, ev)
    print(
        f"lr={lr:<5} curve {line}\n"
        f"      eval bce={bce:.3f} (uniform {ubce:.3f}, red {1-bce/ubce:+.0%}) mae={mae:.2f} base={bmae:.2f} [{time.time()-t0:.0f}s]",
        flush=True,
    )
