import time
from dataclasses import replace

from pcdistill.config import build_config
from pcdistill import train as T

base = build_config({})

cfg = replace(base, train=replace(base.train, steps=400, lr0=0.05))
t0 = time.time()
rows = T.ablation_sweep(cfg, (0,), include_ratio=False)
for r in rows:
    print(f"  {r.setting:9s} seed={r.seed} mIoU={r.miou:.4f} fwIoU={r.fwiou:.4f}", flush=True)
means = T.summarize_sweep(rows)
print(
    f"margins: hybrid={means['hybrid']-means['scratch']:+.4f} "
    f"ipv={means['ipv-only']-means['scratch']:+.4f} "
    f"bev={means['bev-only']-means['scratch']:+.4f} "
    f"elapsed={time.time()-t0:.0f}s",
    flush=True,
)
