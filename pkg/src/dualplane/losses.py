"""The complete training loss stack.

Reconstruction compares the upsampled render (rgb/mask/depth) against
ground truth with four weighted terms; the perceptual term defaults to a
Gaussian-pyramid L1 proxy behind a pluggable callable (it is NOT a
pretrained-network perceptual metric and is never presented as one).
The adversarial pair trains a small strided-conv classifier over a
7-channel stack (upsampled raw rgb ‖ final rgb ‖ mask); its gradient
penalty on real inputs is differentiated exactly via a forward-mode pass
through the classifier. A density smoothness term penalizes |sigma(c) -
sigma(c + eps)| under small gaussian perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PERTURBATION_STD = 0.04
_PYRAMID_LEVELS = 3


@dataclass
class LossWeights:
    lpips: float = 20.0
    l1: float = 4.0
    mask: float = 1.0
    depth: float = 1000.0
    reg: float = 0.1
    r1: float = 5.0

    def __post_init__(self):
        for name in ("lpips", "l1", "mask", "depth", "reg", "r1"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be nonnegative")


# -- perceptual proxy ----------------------------------------------------------

def _binomial_kernel(channels: int) -> np.ndarray:
    """5x5 binomial blur acting independently per channel (sums to 1)."""
    row = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
    k2d = np.outer(row, row)
    kernel = np.zeros((5, 5, channels, channels))
    for c in range(channels):
        kernel[:, :, c, c] = k2d
    return kernel


def pyramid_downsample(img: Tensor) -> Tensor:
    """Blur-and-decimate by 2 (edge padded, so constants stay constant)."""
    kernel = Tensor(_binomial_kernel(img.shape[2]))
    return ad.conv2d(img, kernel, stride=2)


def gaussian_pyramid_l1(a, b, levels: int = _PYRAMID_LEVELS,
                        b_levels: list | None = None) -> Tensor:
    """Mean absolute difference averaged over a blur/decimate pyramid.

    Level 0 is the input pair; each further level blurs with a binomial
    kernel and halves the resolution. For constant images differing by c
    every level contributes exactly c, so the proxy equals c.
    ``b_levels`` optionally supplies the second image's precomputed
    pyramid (it is typically a fixed ground-truth image).
    """
    a = a if isinstance(a, Tensor) else Tensor(a)
    if b_levels is None:
        b = b if isinstance(b, Tensor) else Tensor(b)
        if a.shape != b.shape:
            raise ad.DimensionError(f"perceptual proxy: {a.shape} vs {b.shape}")
    elif a.shape != b_levels[0].shape:
        raise ad.DimensionError(f"perceptual proxy: {a.shape} vs {b_levels[0].shape}")
    total = None
    for level in range(levels):
        b_level = ad.constant(b_levels[level]) if b_levels is not None else b
        diff = ad.reduce_mean(ad.absolute(ad.sub(a, b_level)))
        total = diff if total is None else ad.add(total, diff)
        if level + 1 < levels:
            a = pyramid_downsample(a)
            if b_levels is None:
                b = pyramid_downsample(b)
    return ad.mul(total, 1.0 / levels)


def image_pyramid(img: np.ndarray, levels: int = _PYRAMID_LEVELS) -> list:
    """Plain-array blur/decimate pyramid (for caching fixed images)."""
    out = [np.asarray(img, dtype=np.float64)]
    with ad.no_grad():
        for _ in range(levels - 1):
            out.append(pyramid_downsample(ad.constant(out[-1])).data)
    return out


def perceptual_distance(a, b, metric=None) -> Tensor:
    """Pluggable perceptual distance; defaults to the pyramid L1 proxy."""
    return (metric or gaussian_pyramid_l1)(a, b)


# -- reconstruction -------------------------------------------------------------

def reconstruction_terms(pred, gt, weights: LossWeights,
                         perceptual=None) -> dict:
    """Weighted loss terms comparing an upsampled render to one GT view.

    ``pred`` is a RenderOutput already at the ground-truth resolution;
    ``gt`` provides rgb [H, W, 3], mask [H, W] and depth [H, W]. The
    depth term is averaged over foreground pixels only (gt mask > 0.5).
    Returns {"lpips", "l1", "mask", "depth"} tensors.
    """
    r = pred.resolution
    gt_rgb = np.asarray(gt.rgb, dtype=np.float64)
    gt_mask = np.asarray(gt.mask, dtype=np.float64)
    gt_depth = np.asarray(gt.depth, dtype=np.float64)
    if gt_rgb.shape != (r, r, 3):
        raise ad.DimensionError(
            f"reconstruction: render {r}x{r} vs ground truth {gt_rgb.shape}")

    rgb = ad.reshape(pred.rgb, (r, r, 3))
    mask = ad.reshape(pred.mask, (r * r,))
    depth = ad.reshape(pred.depth, (r * r,))

    terms = {}
    gt_rgb_t = ad.constant(gt_rgb)
    if perceptual is None:
        cached = getattr(gt, "_rgb_pyramid", None)
        if cached is None or cached[0].shape != gt_rgb.shape:
            cached = image_pyramid(gt_rgb)
            try:
                gt._rgb_pyramid = cached
            except AttributeError:
                pass  # gt may be an immutable stand-in; cache is optional
        proxy = gaussian_pyramid_l1(rgb, None, b_levels=cached)
    else:
        proxy = perceptual_distance(rgb, gt_rgb_t, perceptual)
    terms["lpips"] = ad.mul(proxy, weights.lpips)
    terms["l1"] = ad.mul(ad.reduce_mean(ad.absolute(ad.sub(rgb, gt_rgb_t))),
                         weights.l1)
    mask_diff = ad.sub(mask, ad.constant(gt_mask.reshape(-1)))
    terms["mask"] = ad.mul(ad.reduce_mean(ad.mul(mask_diff, mask_diff)), weights.mask)

    fg = (gt_mask.reshape(-1) > 0.5).astype(np.float64)
    count = fg.sum()
    if count > 0:
        depth_diff = ad.mul(ad.sub(depth, ad.constant(gt_depth.reshape(-1))),
                            ad.constant(fg))
        depth_term = ad.mul(ad.reduce_sum(ad.mul(depth_diff, depth_diff)),
                            1.0 / count)
    else:
        depth_term = Tensor(0.0)
    terms["depth"] = ad.mul(depth_term, weights.depth)
    return terms


def reconstruction_loss(pred, gt, weights: LossWeights, perceptual=None) -> Tensor:
    """Sum of the four weighted reconstruction terms for one view."""
    terms = reconstruction_terms(pred, gt, weights, perceptual)
    total = None
    for term in terms.values():
        total = term if total is None else ad.add(total, term)
    return total


# -- discriminator ---------------------------------------------------------------

DISCRIMINATOR_CHANNELS = 7  # raw-rgb(3) ‖ final-rgb(3) ‖ mask(1)


@dataclass
class ConvLayer:
    w: Tensor
    b: Tensor
    stride: int = 1


@dataclass
class DiscriminatorParams:
    """Strided conv stack, global mean pool, then a linear logit head."""

    convs: list = field(default_factory=list)
    w_head: Tensor = None
    b_head: Tensor = None
    slope: float = 0.2


def create_discriminator_params(widths=(16, 32, 32),
                                in_channels: int = DISCRIMINATOR_CHANNELS,
                                rng: np.random.Generator | None = None,
                                init_scale: float | None = None) -> DiscriminatorParams:
    rng = rng or np.random.default_rng(0)
    convs = []
    previous = in_channels
    for width in widths:
        scale = init_scale if init_scale is not None else 1.0 / np.sqrt(9 * previous)
        convs.append(ConvLayer(
            w=Tensor(scale * rng.standard_normal((3, 3, previous, width)),
                     requires_grad=True),
            b=Tensor(np.zeros(width), requires_grad=True),
            stride=2))
        previous = width
    head_scale = init_scale if init_scale is not None else 1.0 / np.sqrt(previous)
    return DiscriminatorParams(
        convs=convs,
        w_head=Tensor(head_scale * rng.standard_normal(previous), requires_grad=True),
        b_head=Tensor(0.0, requires_grad=True))


def discriminator_tensors(d: DiscriminatorParams) -> dict:
    named = {}
    for i, layer in enumerate(d.convs):
        named[f"disc.conv{i}.w"] = layer.w
        named[f"disc.conv{i}.b"] = layer.b
    named["disc.head.w"] = d.w_head
    named["disc.head.b"] = d.b_head
    return named


def load_discriminator_tensors(named: dict) -> DiscriminatorParams:
    convs = []
    i = 0
    while f"disc.conv{i}.w" in named:
        convs.append(ConvLayer(w=Tensor(named[f"disc.conv{i}.w"], requires_grad=True),
                               b=Tensor(named[f"disc.conv{i}.b"], requires_grad=True),
                               stride=2))
        i += 1
    return DiscriminatorParams(convs=convs,
                               w_head=Tensor(named["disc.head.w"], requires_grad=True),
                               b_head=Tensor(named["disc.head.b"], requires_grad=True))


def stack_discriminator_input(rgb_raw, rgb_final, mask) -> Tensor:
    """Assemble the 7-channel input [H, W, 7] from image tensors/arrays."""
    rgb_raw = rgb_raw if isinstance(rgb_raw, Tensor) else Tensor(rgb_raw)
    rgb_final = rgb_final if isinstance(rgb_final, Tensor) else Tensor(rgb_final)
    mask = mask if isinstance(mask, Tensor) else Tensor(mask)
    if mask.ndim == 2:
        mask = ad.reshape(mask, (*mask.shape, 1))
    return ad.concat([rgb_raw, rgb_final, mask], axis=-1)


def discriminator_logit(d: DiscriminatorParams, x) -> Tensor:
    """Scalar realism score for one 7-channel image."""
    h = x if isinstance(x, Tensor) else Tensor(x)
    for layer in d.convs:
        h = ad.leaky_relu(ad.conv2d(h, layer.w, layer.b, stride=layer.stride), d.slope)
    pooled = ad.reduce_mean(h, axis=(0, 1))                    # [C]
    c = pooled.shape[0]
    logit = ad.matmul(ad.reshape(pooled, (1, c)), ad.reshape(d.w_head, (c, 1)))
    return ad.add(ad.reshape(logit, ()), d.b_head)


def _detached_discriminator(d: DiscriminatorParams) -> DiscriminatorParams:
    """Same weights as constants, so no gradient reaches the classifier."""
    return DiscriminatorParams(
        convs=[ConvLayer(layer.w.detach(), layer.b.detach(), layer.stride)
               for layer in d.convs],
        w_head=d.w_head.detach(), b_head=d.b_head.detach(), slope=d.slope)


def _as_triple_list(inputs):
    if isinstance(inputs, tuple) and len(inputs) == 3 and not isinstance(inputs[0], tuple):
        return [inputs]
    return list(inputs)


def generator_loss(d: DiscriminatorParams, fake_inputs) -> Tensor:
    """Negative mean classifier score on rendered (raw, final, mask) triples.

    The classifier weights are treated as constants here: gradients flow
    into the render pipeline only.
    """
    frozen = _detached_discriminator(d)
    triples = _as_triple_list(fake_inputs)
    total = None
    for rgb_raw, rgb_final, mask in triples:
        logit = discriminator_logit(frozen, stack_discriminator_input(rgb_raw, rgb_final, mask))
        total = logit if total is None else ad.add(total, logit)
    return ad.mul(ad.neg(total), 1.0 / len(triples))


def _logit_with_input_tangent(d: DiscriminatorParams, x_value: np.ndarray,
                              tangent: np.ndarray) -> Tensor:
    """Directional derivative of the logit along ``tangent`` at ``x_value``.

    Forward-mode pass: the tangent is pushed through each layer using the
    layer's weights as graph tensors and the primal activations only
    through their (piecewise-constant) slopes, so the result remains
    differentiable with respect to the classifier weights.
    """
    h_value = x_value
    t = Tensor(tangent)
    for layer in d.convs:
        with ad.no_grad():
            pre = ad.conv2d(Tensor(h_value), layer.w, layer.b, stride=layer.stride)
        slopes = np.where(pre.data > 0.0, 1.0, d.slope)
        t = ad.mul(ad.conv2d(t, layer.w, stride=layer.stride), Tensor(slopes))
        h_value = pre.data * slopes
    pooled = ad.reduce_mean(t, axis=(0, 1))
    c = pooled.shape[0]
    out = ad.matmul(ad.reshape(pooled, (1, c)), ad.reshape(d.w_head, (c, 1)))
    return ad.reshape(out, ())


def r1_penalty(d: DiscriminatorParams, real_inputs, gamma: float) -> Tensor:
    """(gamma / 2) * E[ ||d logit / d real_input||^2 ], differentiable in d.

    The squared input-gradient norm is recovered with correct weight
    gradients from a single forward-mode sweep: for j(theta) = g0 . grad_x
    logit(x; theta) with g0 the detached input gradient, gamma * j -
    (gamma / 2) * ||g0||^2 has both the value and the parameter gradient
    of the penalty.
    """
    triples = _as_triple_list(real_inputs)
    frozen = _detached_discriminator(d)  # input gradient must not touch d.grad
    total = None
    for rgb_raw, rgb_final, mask in triples:
        x = Tensor(stack_discriminator_input(rgb_raw, rgb_final, mask).data,
                   requires_grad=True)
        discriminator_logit(frozen, x).backward()
        g0 = x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
        norm_sq = float((g0 * g0).sum())
        jvp = _logit_with_input_tangent(d, x.data, g0)
        term = ad.sub(ad.mul(jvp, gamma), 0.5 * gamma * norm_sq)
        total = term if total is None else ad.add(total, term)
    return ad.mul(total, 1.0 / len(triples))


def discriminator_loss(d: DiscriminatorParams, fake_inputs, real_inputs,
                       weights: LossWeights) -> Tensor:
    """Mean fake score minus mean real score plus the R1 penalty on reals.

    Fake inputs are detached: the classifier trains without pushing any
    gradient back into the render pipeline.
    """
    fake_total = None
    for rgb_raw, rgb_final, mask in _as_triple_list(fake_inputs):
        x = stack_discriminator_input(rgb_raw, rgb_final, mask).detach()
        logit = discriminator_logit(d, x)
        fake_total = logit if fake_total is None else ad.add(fake_total, logit)
    fakes = _as_triple_list(fake_inputs)
    reals = _as_triple_list(real_inputs)
    real_total = None
    for rgb_raw, rgb_final, mask in reals:
        x = stack_discriminator_input(rgb_raw, rgb_final, mask).detach()
        logit = discriminator_logit(d, x)
        real_total = logit if real_total is None else ad.add(real_total, logit)
    loss = ad.sub(ad.mul(fake_total, 1.0 / len(fakes)),
                  ad.mul(real_total, 1.0 / len(reals)))
    if weights.r1 > 0:
        loss = ad.add(loss, r1_penalty(d, real_inputs, weights.r1))
    return loss


# -- density smoothness -----------------------------------------------------------

def density_smoothness_loss(sigma_fn, probe_points, seed: int,
                            weights: LossWeights) -> Tensor:
    """w.reg * mean |sigma(c) - sigma(c + eps)| over gaussian perturbations.

    ``sigma_fn`` maps [N, 3] world points to a density tensor [N]; eps is
    drawn per probe and per coordinate from N(0, 0.04^2), deterministic
    given ``seed``.
    """
    probes = np.asarray(probe_points, dtype=np.float64)
    eps = np.random.default_rng(seed).normal(0.0, PERTURBATION_STD, size=probes.shape)
    base = sigma_fn(probes)
    shifted = sigma_fn(probes + eps)
    return ad.mul(ad.reduce_mean(ad.absolute(ad.sub(base, shifted))), weights.reg)


def density_fn_from_state(dtp, fusion_params, dec, mode: str = "per_point"):
    """Density probe through the live field: sample -> fuse (zero dirs) -> decode."""
    from .fusion import concat_fusion, direction_aware_attention
    from .render import decode_points
    from .triplane import sample_dual

    def sigma_fn(points: np.ndarray) -> Tensor:
        f_front, f_back = sample_dual(dtp, points)
        if mode == "concat":
            fused = concat_fusion(f_front, f_back)
        else:
            zero_dirs = np.zeros((points.shape[0], 3))
            fused = direction_aware_attention(fusion_params, f_front, f_back,
                                              zero_dirs, mode=mode)
        sigma, _ = decode_points(dec, fused)
        return sigma

    return sigma_fn


def total_loss(l_rec, l_g=None, l_d=None, l_reg=None) -> Tensor:
    """Sum of the four loss components; omitted components count as zero."""
    total = l_rec if isinstance(l_rec, Tensor) else Tensor(l_rec)
    for component in (l_g, l_d, l_reg):
        if component is None:
            continue
        total = ad.add(total, component if isinstance(component, Tensor)
                       else Tensor(component))
    return total
