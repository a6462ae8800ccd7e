import time
from dataclasses import replace

from pcdistill.config import build_config
from pcdistill import train as T

base = build_config({})


def run(tag, steps, lr, alpha, beta, gamma, enable_ipv, enable_bev):
    cfg = replace(
        base,
        loss=replace(base.loss, alpha=alpha, beta=beta, gamma=gamma),
        train=replace(base.train, steps=steps, lr0=lr, enable_ipv=enable_ipv, enable_bev=enable_bev),
    )
    t0 = time.time()
    res = T.pretrain(cfg)
    dt = time.time() - t0
    hist = res.history
    line = " ".join(f"{s.step}:{s.depth:.2f}" for s in hist if s.step % 50 == 0 or s.step == len(hist) - 1)
    print(f"[{tag}] depth curve {line}", flush=True)
    models = T.build_models(cfg)
    models.load_state(res.state)
    ev = T.make_scenes(cfg, cfg.train.n_eval_scenes, cfg.train.seed, role=T._ROLE_EVAL_SCENE)
    bce, ubce, mae, bmae = T.depth_eval(cfg, models, ev)
    print(
        f"[{tag}] eval bce={bce:.3f} (uniform {ubce:.3f}, red {1-bce/ubce:+.0%}) "
        f"mae={mae:.2f} (base {bmae:.2f})  [{dt:.0f}s]",
        flush=True,
    )
    return res


run("depth-only      ", 400, 0.2, 0.0, 0.0, 1.0, False, False)
run("hybrid g=1      ", 400, 0.2, 0.25, 1.0, 1.0, True, True)
run("hybrid g=4      ", 400, 0.2, 0.25, 1.0, 4.0, True, True)
