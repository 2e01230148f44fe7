"""Scratch: compare decoder/plane init settings for carving speed."""
import sys
import time

import numpy as np

from dualplane import autodiff as ad
from dualplane.metrics import psnr, ssim
from dualplane.scenes import read_dataset
from dualplane.trainer import RunConfig, fit, init_state, render_eval_views

ds = read_dataset("/tmp/probe_ds")
ad.set_default_dtype(np.float32)

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 600
variant = sys.argv[2] if len(sys.argv) > 2 else "base"

extent = 1.2 if "tight" in variant else 1.5
cfg = RunConfig(steps=steps, fusion_mode="per_point", seed=7, plane_extent=extent)
state = init_state(cfg, ds)

if variant == "gain":
    state.decoder.w2.data *= 8.0
    state.decoder.b2.data[0] = -1.0
elif variant == "gain_planes":
    state.decoder.w2.data *= 8.0
    state.decoder.b2.data[0] = -1.0
    for tp in (state.dtp.front, state.dtp.back):
        for plane in tp.planes().values():
            plane.data[:] = 0.05 * np.random.default_rng(5).standard_normal(
                plane.data.shape).astype(plane.data.dtype)
elif variant == "gain16":
    state.decoder.w2.data *= 16.0
    state.decoder.b2.data[0] = -0.5
elif variant == "gain32":
    state.decoder.w2.data *= 32.0
    state.decoder.b2.data[0] = -0.5
elif variant == "gain16_tight":
    import dualplane.geometry as geo
    geo.DEFAULT_DEPTH_MARGIN = 1.2
    state.decoder.w2.data *= 16.0
    state.decoder.b2.data[0] = -0.5

t0 = time.time()
state = fit(ds, cfg, state=state)
front = ds.views[0]
out = render_eval_views(state, [front.camera])[0]
img = out.images()
bg = img["mask"][front.mask < 0.5].mean()
print(f"{variant} @{steps} ({time.time()-t0:.0f}s): "
      f"front psnr {psnr(img['rgb'], front.rgb):.2f} "
      f"ssim {ssim(img['rgb'], front.rgb):.3f} bg-mask {bg:.3f}", flush=True)
