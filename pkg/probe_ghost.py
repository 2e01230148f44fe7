"""Scratch probe: fit both fusion modes briefly and inspect ghost metrics."""
import sys
import time

import numpy as np

from dualplane import autodiff as ad
from dualplane.metrics import evaluate_views, psnr, ssim
from dualplane.scenes import build_figurine, write_dataset
from dualplane.trainer import RunConfig, fit

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
out_dir = sys.argv[2] if len(sys.argv) > 2 else "/tmp/probe_ds"

scene = build_figurine(7)
ds = write_dataset(scene, 7, False, out_dir, resolution=64)

ad.set_default_dtype(np.float32)
results = {}
for mode in ("per_point", "concat"):
    cfg = RunConfig(steps=steps, fusion_mode=mode, seed=7)
    t0 = time.time()
    state = fit(ds, cfg)
    report = evaluate_views(state, ds)
    results[mode] = report
    line = " ".join(f"{v.label}: psnr {v.psnr:.2f} ssim {v.ssim:.3f}" for v in report.views)
    ghost = [v.ghost for v in report.views if v.ghost is not None][0]
    print(f"{mode} ({steps} steps, {time.time()-t0:.0f}s): {line}  ghost={ghost:.4f}",
      flush=True)

g_pp = [v.ghost for v in results["per_point"].views if v.ghost is not None][0]
g_cc = [v.ghost for v in results["concat"].views if v.ghost is not None][0]
b_pp = [v.psnr for v in results["per_point"].views if v.label == "back"][0]
b_cc = [v.psnr for v in results["concat"].views if v.label == "back"][0]
print(f"ghost per_point={g_pp:.4f} concat={g_cc:.4f} "
      f"(need pp <= 0.7*cc); back psnr pp={b_pp:.2f} cc={b_cc:.2f} (need pp >= cc)")
