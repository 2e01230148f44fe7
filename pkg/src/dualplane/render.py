"""Differentiable volume rendering of the dual tri-plane field.

Per ray: stratified depths, dual tri-plane sampling, direction-aware
fusion, a small density/color decoder and emission-absorption
compositing. Transmittance is computed as exp(-prefix_sum(sigma*delta)),
which is algebraically identical to the product of per-sample
transparency factors and keeps the backward pass simple.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fusion import FusionParams, concat_fusion, fuse_groups
from .geometry import Camera, generate_rays, stratify_samples
from .triplane import DualTriPlane, sample_dual

DEFAULT_SAMPLES_PER_RAY = 32
DEFAULT_BACKGROUND = (1.0, 1.0, 1.0)

_DECODER_FIELDS = ("w1", "b1", "w2", "b2")


@dataclass
class DecoderParams:
    """Two-layer perceptron: fused feature -> (density, rgb).

    Density uses softplus (nonnegative), color uses sigmoid (in [0, 1]).
    """

    w1: Tensor
    b1: Tensor
    w2: Tensor  # [hidden, 4]: column 0 raw density, columns 1..3 raw rgb
    b2: Tensor
    slope: float = 0.2

    @property
    def in_width(self) -> int:
        return self.w1.shape[0]


def create_decoder_params(in_width: int = 32, hidden: int = 64,
                          rng: np.random.Generator | None = None,
                          density_bias: float = -0.5,
                          output_gain: float = 16.0) -> DecoderParams:
    """Fresh decoder.

    ``output_gain`` scales the head weights: Adam moves each weight at
    most ~lr per step, so the head gain bounds how fast density can
    sharpen within a fixed step budget. ``density_bias`` starts the field
    slightly transparent; strongly negative values stall (softplus
    saturates and the density gradient dies), while a dense start turns
    carving into a slow layer-by-layer peel.
    """
    rng = rng or np.random.default_rng(0)
    b2 = np.zeros(4)
    b2[0] = density_bias
    return DecoderParams(
        w1=Tensor(rng.standard_normal((in_width, hidden)) / np.sqrt(in_width),
                  requires_grad=True),
        b1=Tensor(np.zeros(hidden), requires_grad=True),
        w2=Tensor(output_gain * rng.standard_normal((hidden, 4)) / np.sqrt(hidden),
                  requires_grad=True),
        b2=Tensor(b2, requires_grad=True),
    )


def decoder_tensors(dec: DecoderParams) -> dict:
    return {f"dec.{name}": getattr(dec, name) for name in _DECODER_FIELDS}


def load_decoder_tensors(named: dict) -> DecoderParams:
    return DecoderParams(**{name: Tensor(named[f"dec.{name}"], requires_grad=True)
                            for name in _DECODER_FIELDS})


def decode_points(dec: DecoderParams, fused) -> tuple[Tensor, Tensor]:
    """Map fused features [N, W] to (sigma [N], rgb [N, 3])."""
    fused = fused if isinstance(fused, Tensor) else Tensor(fused)
    hidden = ad.leaky_relu(ad.linear(fused, dec.w1, dec.b1), dec.slope)
    raw = ad.linear(hidden, dec.w2, dec.b2)
    n = raw.shape[0]
    sigma = ad.softplus(ad.reshape(ad.narrow(raw, 1, 0, 1), (n,)))
    rgb = ad.sigmoid(ad.narrow(raw, 1, 1, 3))
    return sigma, rgb


@dataclass
class RenderOutput:
    rgb: Tensor      # [P, 3]
    depth: Tensor    # [P]
    mask: Tensor     # [P]
    weights: Tensor | None  # [P, S] compositing weights, for diagnostics
    resolution: int | None = None
    background: tuple = DEFAULT_BACKGROUND

    def images(self) -> dict:
        """Detached numpy images, reshaped to [H, W, ...] when square."""
        r = self.resolution
        if r is None:
            raise ValueError("RenderOutput has no stored resolution")
        return {
            "rgb": self.rgb.data.reshape(r, r, 3).copy(),
            "depth": self.depth.data.reshape(r, r).copy(),
            "mask": self.mask.data.reshape(r, r).copy(),
        }


def composite_rays(sigma, rgb, depths, far: float,
                   background=DEFAULT_BACKGROUND):
    """Emission-absorption compositing over [P, S] sample batches.

    delta_i spans to the next sample (the last one to ``far``); weights
    are transmittance times local opacity; rays blend toward the
    constant background by their residual transparency. Returns
    (rgb [P, 3], depth [P], mask [P], weights [P, S]).
    """
    sigma = sigma if isinstance(sigma, Tensor) else Tensor(sigma)
    rgb = rgb if isinstance(rgb, Tensor) else Tensor(rgb)
    depths = np.asarray(depths, dtype=np.float64)
    if depths.ndim != 2:
        raise ValueError(f"composite_rays: depths must be [P, S], got {depths.shape}")
    if np.any(np.diff(depths, axis=1) <= 0.0):
        raise ValueError("composite_rays: depths must be strictly increasing per ray")
    p, s = depths.shape
    deltas = np.concatenate([np.diff(depths, axis=1),
                             far - depths[:, -1:]], axis=1)
    if np.any(deltas <= 0.0):
        raise ValueError("composite_rays: last depth must stay below far")

    tau = ad.mul(sigma, ad.constant(deltas))
    transmittance = ad.exp(ad.neg(ad.cumsum_exclusive(tau, axis=1)))
    alpha = ad.sub(1.0, ad.exp(ad.neg(tau)))
    weights = ad.mul(transmittance, alpha)              # [P, S]

    mask = ad.reduce_sum(weights, axis=1)               # [P]
    rgb_fg = ad.reduce_sum(ad.scale_rows(rgb, weights), axis=1)   # [P, 3]
    bg = ad.constant(np.broadcast_to(np.asarray(background, dtype=np.float64),
                                     (p, 3)))
    rgb_out = ad.add(rgb_fg, ad.scale_rows(bg, ad.sub(1.0, mask)))
    depth_out = ad.reduce_sum(ad.mul(weights, ad.constant(depths)), axis=1)
    return rgb_out, depth_out, mask, weights


def composite_ray(sigma, rgb, depths, background=DEFAULT_BACKGROUND,
                  far: float | None = None):
    """Single-ray compositing; returns (rgb [3], depth, mask) tensors."""
    depths = np.asarray(depths, dtype=np.float64)
    if far is None:
        far = float(depths[-1] + (depths[-1] - depths[0]) / max(len(depths) - 1, 1))
    sigma = sigma if isinstance(sigma, Tensor) else Tensor(sigma)
    rgb = rgb if isinstance(rgb, Tensor) else Tensor(rgb)
    s = depths.shape[0]
    rgb_out, depth_out, mask, _ = composite_rays(
        ad.reshape(sigma, (1, s)), ad.reshape(rgb, (1, s, 3)),
        depths.reshape(1, s), far, background)
    return (ad.reshape(rgb_out, (3,)), ad.reshape(depth_out, ()),
            ad.reshape(mask, ()))


def render_rays(rays, dtp: DualTriPlane, fusion: FusionParams | None,
                dec: DecoderParams, samples_per_ray: int,
                seed: int | None = None, mode: str = "per_point",
                background=DEFAULT_BACKGROUND) -> RenderOutput:
    """Render an arbitrary ray batch (the worker behind render_view)."""
    depths, points = stratify_samples(rays, samples_per_ray, seed)
    p, s = depths.shape
    flat_points = points.reshape(p * s, 3)
    f_front, f_back = sample_dual(dtp, flat_points)
    dirs = np.repeat(rays.directions[:, None, :], s, axis=1)

    if mode == "concat":
        fused = concat_fusion(f_front, f_back)
    elif mode == "as_written":
        c = f_front.shape[1]
        fused = fuse_groups(fusion,
                            ad.reshape(f_front, (p, s, c)),
                            ad.reshape(f_back, (p, s, c)),
                            dirs)
        fused = ad.reshape(fused, (p * s, fusion.width))
    elif mode == "per_point":
        from .fusion import direction_aware_attention
        fused = direction_aware_attention(fusion, f_front, f_back,
                                          dirs.reshape(p * s, 3), mode="per_point")
    else:
        raise ValueError(f"unknown render fusion mode {mode!r}")

    sigma, rgb = decode_points(dec, fused)
    rgb_out, depth_out, mask, weights = composite_rays(
        ad.reshape(sigma, (p, s)), ad.reshape(rgb, (p, s, 3)),
        depths, rays.far, background)
    return RenderOutput(rgb=rgb_out, depth=depth_out, mask=mask,
                        weights=weights, background=tuple(background))


def render_view(cam: Camera, dtp: DualTriPlane, fusion: FusionParams | None,
                dec: DecoderParams,
                samples_per_ray: int = DEFAULT_SAMPLES_PER_RAY,
                seed: int | None = None, mode: str = "per_point",
                background=DEFAULT_BACKGROUND,
                chunk_rays: int | None = None) -> RenderOutput:
    """Render one full view (a ray through every pixel center).

    Deterministic given ``seed``; differentiable down to the tri-plane
    texels, fusion parameters and decoder. ``chunk_rays`` splits the ray
    set to bound peak memory (useful inside ``no_grad`` evaluation).
    """
    rays = generate_rays(cam)
    p = rays.origins.shape[0]
    if chunk_rays is None or p <= chunk_rays:
        # Jitter is drawn per full view so chunked/unchunked renders match.
        out = render_rays(rays, dtp, fusion, dec, samples_per_ray, seed,
                          mode, background)
        out.resolution = cam.resolution
        return out

    depths_all, _ = stratify_samples(rays, samples_per_ray, seed)
    pieces = []
    from .geometry import RayBatch
    for start in range(0, p, chunk_rays):
        stop = min(start + chunk_rays, p)
        sub = RayBatch(rays.origins[start:stop], rays.directions[start:stop],
                       rays.near, rays.far)
        sub_depths = depths_all[start:stop]
        pieces.append(_render_with_depths(sub, sub_depths, dtp, fusion, dec,
                                          mode, background))
    out = RenderOutput(
        rgb=ad.concat([c.rgb for c in pieces], axis=0),
        depth=ad.concat([c.depth for c in pieces], axis=0),
        mask=ad.concat([c.mask for c in pieces], axis=0),
        weights=ad.concat([c.weights for c in pieces], axis=0),
        resolution=cam.resolution, background=tuple(background))
    return out


def _render_with_depths(rays, depths, dtp, fusion, dec, mode, background):
    p, s = depths.shape
    points = rays.origins[:, None, :] + depths[..., None] * rays.directions[:, None, :]
    f_front, f_back = sample_dual(dtp, points.reshape(p * s, 3))
    dirs = np.repeat(rays.directions[:, None, :], s, axis=1)
    if mode == "concat":
        fused = concat_fusion(f_front, f_back)
    elif mode == "as_written":
        c = f_front.shape[1]
        fused = ad.reshape(fuse_groups(fusion,
                                       ad.reshape(f_front, (p, s, c)),
                                       ad.reshape(f_back, (p, s, c)),
                                       dirs), (p * s, fusion.width))
    else:
        from .fusion import direction_aware_attention
        fused = direction_aware_attention(fusion, f_front, f_back,
                                          dirs.reshape(p * s, 3), mode="per_point")
    sigma, rgb = decode_points(dec, fused)
    rgb_out, depth_out, mask, weights = composite_rays(
        ad.reshape(sigma, (p, s)), ad.reshape(rgb, (p, s, 3)),
        depths, rays.far, background)
    return RenderOutput(rgb=rgb_out, depth=depth_out, mask=mask, weights=weights,
                        background=tuple(background))


def upsample_render_to(out: RenderOutput, resolution: int) -> RenderOutput:
    """Bilinearly resample rgb/mask/depth images to a target resolution.

    Stands in for the super-resolution stage: the upsampled raw render is
    also the final image. Requires a square stored resolution.
    """
    r = out.resolution
    if r is None:
        raise ValueError("upsample_render needs RenderOutput.resolution")
    if resolution < r:
        raise ValueError(f"refusing to downsample a render ({r} -> {resolution})")
    if resolution == r:
        return out
    rgb = ad.resize_bilinear(ad.reshape(out.rgb, (r, r, 3)), resolution, resolution)
    mask = ad.resize_bilinear(ad.reshape(out.mask, (r, r, 1)), resolution, resolution)
    depth = ad.resize_bilinear(ad.reshape(out.depth, (r, r, 1)), resolution, resolution)
    rr = resolution
    return RenderOutput(
        rgb=ad.reshape(rgb, (rr * rr, 3)),
        depth=ad.reshape(depth, (rr * rr,)),
        mask=ad.reshape(mask, (rr * rr,)),
        weights=None, resolution=rr, background=out.background)


def upsample_render(out: RenderOutput, factor: int) -> RenderOutput:
    """Bilinearly upsample rgb/mask/depth images by an integer factor."""
    if factor < 1:
        raise ValueError("upsample factor must be >= 1")
    if out.resolution is None:
        raise ValueError("upsample_render needs RenderOutput.resolution")
    return upsample_render_to(out, out.resolution * factor)
