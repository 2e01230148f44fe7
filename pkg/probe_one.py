"""Scratch probe: fit ONE fusion mode and report metrics at checkpoints."""
import sys
import time

import numpy as np

from dualplane import autodiff as ad
from dualplane.metrics import evaluate_views
from dualplane.scenes import read_dataset
from dualplane.trainer import RunConfig, fit

mode = sys.argv[1]
total = int(sys.argv[2])
ds_dir = sys.argv[3]
rays = int(sys.argv[4]) if len(sys.argv) > 4 else 1024

ds = read_dataset(ds_dir)
ad.set_default_dtype(np.float32)

state = None
t0 = time.time()
cfg = RunConfig(steps=total, fusion_mode=mode, rays_per_view=rays, seed=7)
for milestone in (500, 1000, 1500, 2000, 3000):
    if milestone > total:
        break
    state = fit(ds, cfg, state=state, until=milestone)
    report = evaluate_views(state, ds)
    cells = " ".join(f"{v.label}:psnr={v.psnr:.2f},ssim={v.ssim:.3f}"
                     for v in report.views)
    ghost = [v.ghost for v in report.views if v.ghost is not None][0]
    print(f"[{mode} @{milestone} {time.time()-t0:.0f}s] {cells} ghost={ghost:.4f}",
          flush=True)
