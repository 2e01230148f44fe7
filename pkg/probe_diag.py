"""Scratch diagnostics: fit, save everything, analyze eval variants and error maps."""
import os
import sys
import time

import numpy as np

from dualplane import autodiff as ad
from dualplane.geometry import Camera
from dualplane.metrics import psnr, ssim
from dualplane.render import render_view
from dualplane.scenes import read_dataset
from dualplane.trainer import RunConfig, fit, render_eval_views, save_state

mode = sys.argv[1]
steps = int(sys.argv[2])
ds_dir = sys.argv[3]
out = sys.argv[4]

os.makedirs(out, exist_ok=True)
ds = read_dataset(ds_dir)
ad.set_default_dtype(np.float32)

rays = int(sys.argv[5]) if len(sys.argv) > 5 else 1024
cfg = RunConfig(steps=steps, fusion_mode=mode, rays_per_view=rays, seed=7)
t0 = time.time()
state = fit(ds, cfg, log_path=os.path.join(out, f"loss_{mode}.txt"))
print(f"fit {steps} in {time.time()-t0:.0f}s", flush=True)
save_state(state, os.path.join(out, f"state_{mode}"))

front_gt = ds.views[0]
cam = front_gt.camera
dtp = state.field_triplanes()
bg = (1.0, 1.0, 1.0)

def eval_variant(label, samples, seed):
    with ad.no_grad():
        o = render_view(cam, dtp, state.fusion, state.decoder,
                        samples_per_ray=samples, seed=seed,
                        mode=cfg.fusion_mode, background=bg, chunk_rays=2048)
    img = o.images()["rgb"]
    print(f"  front eval {label}: psnr {psnr(img, front_gt.rgb):.2f} "
          f"ssim {ssim(img, front_gt.rgb):.3f}", flush=True)
    return img

img32 = eval_variant("mid-32", 32, None)
eval_variant("mid-64", 64, None)
eval_variant("mid-128", 128, None)
eval_variant("jit-32(seed0)", 32, 0)

# spatial error decomposition: silhouette ring vs interior vs background
err = ((img32 - front_gt.rgb) ** 2).mean(axis=-1)
mask = front_gt.mask > 0.5
from dualplane.scenes import erode_mask
interior = erode_mask(front_gt.mask, 2)
ring = mask & ~interior
bg_px = ~mask
for name, sel in (("interior", interior), ("silhouette_ring", ring),
                  ("background", bg_px)):
    print(f"  {name:16s}: {sel.sum():4d} px, mse {err[sel].mean():.5f}, "
          f"share {err[sel].sum() / err.sum() * 100:.1f}%", flush=True)
