"""Per-scene optimization: fit the dual field to the four orthogonal views.

One step renders the four supervision views at a reduced grid (the
configured ray budget per view laid out as a square), bilinearly
upsamples to ground-truth resolution, accumulates the reconstruction and
density-smoothness losses (plus the adversarial pair when enabled) and
applies one Adam update. All randomness is derived from (seed, step), so
checkpoint/resume reproduces an uninterrupted run bit for bit at 64-bit
precision.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_tensors, save_tensors
from .encoder import (EncoderParams, create_encoder_params,
                      encode_to_dual_triplane, encoder_tensors,
                      load_encoder_tensors)
from .fusion import (FusionParams, create_fusion_params, fusion_tensors,
                     load_fusion_tensors)
from .geometry import Camera
from .losses import (DiscriminatorParams, LossWeights,
                     create_discriminator_params, density_fn_from_state,
                     density_smoothness_loss, discriminator_loss,
                     discriminator_tensors, generator_loss,
                     load_discriminator_tensors, reconstruction_terms)
from .render import (DecoderParams, RenderOutput, create_decoder_params,
                     decoder_tensors, load_decoder_tensors, render_view,
                     upsample_render_to)
from .triplane import (DualTriPlane, create_dual_triplane,
                       load_triplane_tensors, triplane_tensors)

LOSS_LOG_HEADER = ("# step\tl_rec\tl_lpips_proxy\tl_l1\tl_mask\tl_depth"
                   "\tl_g\tl_d\tl_reg\tl_total")

CONFIG_KEY_DOC = """\
# dualplane run configuration
# steps            optimization steps
# resolution       dataset / evaluation image resolution
# rays_per_view    per-step ray budget per view (rendered as a sqrt grid)
# samples_per_ray  stratified samples along each ray
# plane_resolution / plane_channels / plane_extent   tri-plane geometry
# fusion_mode      per_point | as_written | concat (concat = attention off)
# use_encoder      true: parameters are the two image encoders (+fusion/decoder)
#                  false: tri-plane texels are optimized directly
# shared_encoder   true: route both inputs through the front encoder path
# use_gan          true: alternate classifier updates with generator updates
# seed             master seed; all per-step randomness derives from it
# jitter           true: re-draw stratified jitter each step; false: midpoints
# lr_generator / lr_discriminator   Adam learning rates
# background       background gray level in [0, 1]
# reg_probes       probe points per step for the density smoothness term
# w_lpips w_l1 w_mask w_depth w_reg w_r1   loss weights
"""


@dataclass
class RunConfig:
    steps: int = 2000
    resolution: int = 64
    rays_per_view: int = 1024
    samples_per_ray: int = 32
    plane_resolution: int = 64
    plane_channels: int = 16
    plane_extent: float = 1.5
    fusion_mode: str = "per_point"
    use_encoder: bool = False
    shared_encoder: bool = False
    use_gan: bool = False
    seed: int = 7
    jitter: bool = True
    lr_generator: float = 0.0025
    lr_discriminator: float = 0.0002
    lr_schedule: str = "cosine"  # constant | cosine (decay stabilizes late steps)
    background: float = 1.0
    reg_probes: int = 256
    w_lpips: float = 20.0
    w_l1: float = 4.0
    w_mask: float = 1.0
    w_depth: float = 1000.0
    w_reg: float = 0.1
    w_r1: float = 5.0

    def __post_init__(self):
        if self.fusion_mode not in ("per_point", "as_written", "concat"):
            raise ValueError(f"unknown fusion_mode {self.fusion_mode!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        root = int(round(np.sqrt(self.rays_per_view)))
        if root * root != self.rays_per_view:
            raise ValueError("rays_per_view must be a perfect square "
                             f"(got {self.rays_per_view})")

    def learning_rate(self, step: int, base: float) -> float:
        """Per-step learning rate; cosine decays to a 5% floor at the end."""
        if self.lr_schedule == "constant" or self.steps <= 1:
            return base
        progress = min(step / max(self.steps - 1, 1), 1.0)
        return base * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * progress)))

    @property
    def train_resolution(self) -> int:
        return int(round(np.sqrt(self.rays_per_view)))

    def loss_weights(self) -> LossWeights:
        return LossWeights(lpips=self.w_lpips, l1=self.w_l1, mask=self.w_mask,
                           depth=self.w_depth, reg=self.w_reg, r1=self.w_r1)

    def to_file(self, path: str) -> None:
        lines = [CONFIG_KEY_DOC.rstrip()]
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = f"{value:.17g}"
            lines.append(f"{f.name} = {value}")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        if not os.path.exists(path):
            raise FileNotFoundError(f"config file not found: {path}")
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        kwargs = {}
        with open(path, "r", encoding="ascii") as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if not sep or key not in types:
                    raise ValueError(f"config: unknown or malformed line {line!r}")
                current = getattr(defaults, key)
                if isinstance(current, bool):
                    if value not in ("true", "false"):
                        raise ValueError(f"config: boolean {key} must be true/false")
                    kwargs[key] = value == "true"
                elif isinstance(current, int):
                    kwargs[key] = int(value)
                elif isinstance(current, float):
                    kwargs[key] = float(value)
                else:
                    kwargs[key] = value
        return cls(**kwargs)


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict | None = None) -> dict:
    """One bias-corrected Adam update, in place on the parameter tensors.

    ``grads`` defaults to each parameter's accumulated ``grad`` (missing
    or None gradients count as zero). Returns the updated params dict.
    """
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ad.DimensionError(
                f"adam_step: grad shape {g.shape} does not match param "
                f"{name!r} shape {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


# -- fit state ----------------------------------------------------------------


@dataclass
class FitState:
    config: RunConfig
    dtp: DualTriPlane
    fusion: FusionParams
    decoder: DecoderParams
    encoder: EncoderParams | None
    discriminator: DiscriminatorParams | None
    adam_g: AdamState
    adam_d: AdamState | None
    step: int = 0
    loss_log: list = field(default_factory=list)

    def generator_params(self) -> dict:
        """Everything updated by the generator-side Adam."""
        named = {}
        if self.config.use_encoder:
            named.update(encoder_tensors(self.encoder))
        else:
            named.update(triplane_tensors(self.dtp))
        if self.config.fusion_mode != "concat":
            named.update(fusion_tensors(self.fusion))
        named.update(decoder_tensors(self.decoder))
        return named

    def field_triplanes(self) -> DualTriPlane:
        """The live dual field (re-encoded from the inputs in encoder mode)."""
        if not self.config.use_encoder:
            return self.dtp
        return encode_to_dual_triplane(self.encoder, self._front_img, self._back_img,
                                       shared=self.config.shared_encoder)

    def attach_inputs(self, front_img: np.ndarray, back_img: np.ndarray) -> None:
        self._front_img = front_img
        self._back_img = back_img


def init_state(config: RunConfig, dataset=None) -> FitState:
    rng = np.random.default_rng([config.seed, 1])
    decoder_width = (2 * config.plane_channels if config.fusion_mode == "concat"
                     else 32)
    dtp = create_dual_triplane(config.plane_resolution, config.plane_channels,
                               config.plane_extent, init_scale=0.01, rng=rng)
    fusion = create_fusion_params(config.plane_channels, rng=rng)
    decoder = create_decoder_params(in_width=decoder_width, rng=rng)
    encoder = None
    if config.use_encoder:
        encoder = create_encoder_params(config.plane_resolution,
                                        plane_channels=config.plane_channels,
                                        plane_extent=config.plane_extent, rng=rng)
    discriminator = create_discriminator_params(rng=rng) if config.use_gan else None
    state = FitState(config=config, dtp=dtp, fusion=fusion, decoder=decoder,
                     encoder=encoder, discriminator=discriminator,
                     adam_g=AdamState(lr=config.lr_generator),
                     adam_d=AdamState(lr=config.lr_discriminator)
                     if config.use_gan else None)
    if dataset is not None:
        state.attach_inputs(dataset.front.rgb, dataset.back.rgb)
    return state


def _train_camera(cam: Camera, resolution: int) -> Camera:
    return Camera(cam.kind, cam.azimuth, cam.elevation, cam.distance,
                  cam.fov, cam.ortho_halfwidth, resolution)


def _jitter_seed(config: RunConfig, step: int, view: int) -> int | None:
    if not config.jitter:
        return None
    return int(np.random.default_rng([config.seed, 2, step, view]).integers(2**31))


def render_train_views(state: FitState, dataset, step: int) -> list[RenderOutput]:
    """The four supervision renders at the training grid, upsampled to GT size."""
    config = state.config
    dtp = state.field_triplanes()
    if config.train_resolution > config.resolution:
        raise ValueError("training grid exceeds the dataset resolution")
    background = (config.background,) * 3
    outs = []
    for view_index, view in enumerate(dataset.ortho_views()):
        cam = _train_camera(view.camera, config.train_resolution)
        out = render_view(cam, dtp, state.fusion, state.decoder,
                          samples_per_ray=config.samples_per_ray,
                          seed=_jitter_seed(config, step, view_index),
                          mode=config.fusion_mode, background=background)
        outs.append(upsample_render_to(out, config.resolution))
    return outs


def compute_step_losses(state: FitState, dataset, step: int,
                        renders: list[RenderOutput] | None = None) -> dict:
    """All differentiable loss components for one step.

    Returns tensors keyed l_rec / l_lpips / l_l1 / l_mask / l_depth /
    l_reg (and l_g under GAN); values are means over the four views.
    Pure function of (state, dataset, step): the loop logs exactly these.
    """
    config = state.config
    weights = config.loss_weights()
    renders = renders if renders is not None else render_train_views(state, dataset, step)
    sums: dict[str, Tensor] = {}
    for out, view in zip(renders, dataset.ortho_views()):
        for key, term in reconstruction_terms(out, view, weights).items():
            sums[key] = term if key not in sums else ad.add(sums[key], term)
    per_view = 1.0 / len(renders)
    components = {f"l_{k}": ad.mul(v, per_view) for k, v in sums.items()}
    l_rec = None
    for key in ("lpips", "l1", "mask", "depth"):
        term = components[f"l_{key}"]
        l_rec = term if l_rec is None else ad.add(l_rec, term)
    components["l_rec"] = l_rec

    probes = np.random.default_rng([config.seed, 3, step]).uniform(
        -config.plane_extent, config.plane_extent, size=(config.reg_probes, 3))
    sigma_fn = density_fn_from_state(state.field_triplanes(), state.fusion,
                                     state.decoder, config.fusion_mode)
    components["l_reg"] = density_smoothness_loss(
        sigma_fn, probes, seed=int(np.random.default_rng(
            [config.seed, 4, step]).integers(2**31)), weights=weights)

    if config.use_gan:
        fakes = []
        for out in renders:
            r = out.resolution
            rgb = ad.reshape(out.rgb, (r, r, 3))
            mask = ad.reshape(out.mask, (r, r))
            fakes.append((rgb, rgb, mask))
        components["l_g"] = generator_loss(state.discriminator, fakes)
    return components


def _loss_line(step: int, values: dict) -> str:
    keys = ("l_rec", "l_lpips", "l_l1", "l_mask", "l_depth", "l_g", "l_d",
            "l_reg", "l_total")
    return "\t".join([str(step)] + [f"{values.get(k, 0.0):.10e}" for k in keys])


def fit(dataset, config: RunConfig, state: FitState | None = None,
        log_path: str | None = None, until: int | None = None) -> FitState:
    """Optimize the field on a dataset until ``config.steps`` is reached.

    Resuming from a checkpointed ``state`` continues the trajectory
    exactly as if the run had never stopped (pass the same config;
    ``until`` stops early without altering the schedule). Logs one loss
    line per step.
    """
    if len(dataset.views) < 4:
        raise ValueError("fit: dataset must contain the four orthogonal views")
    if state is None:
        state = init_state(config, dataset)
    else:
        state.config = config
        state.attach_inputs(dataset.front.rgb, dataset.back.rgb)
    stop = config.steps if until is None else min(until, config.steps)
    log_fh = None
    if log_path:
        fresh = not os.path.exists(log_path) or state.step == 0
        log_fh = open(log_path, "w" if fresh else "a", encoding="ascii")
        if fresh:
            log_fh.write(LOSS_LOG_HEADER + "\n")
    try:
        while state.step < stop:
            step = state.step
            renders = render_train_views(state, dataset, step)
            components = compute_step_losses(state, dataset, step, renders)

            generator_objective = ad.add(components["l_rec"], components["l_reg"])
            if config.use_gan:
                generator_objective = ad.add(generator_objective, components["l_g"])
            gen_params = state.generator_params()
            ad.zero_grad(gen_params)
            generator_objective.backward()
            state.adam_g.lr = config.learning_rate(step, config.lr_generator)
            adam_step(state.adam_g, gen_params)

            values = {k: float(v.item()) for k, v in components.items() if v is not None}
            if config.use_gan:
                weights = config.loss_weights()
                fakes = []
                for out in renders:
                    r = out.resolution
                    fakes.append((ad.reshape(out.rgb, (r, r, 3)).detach(),
                                  ad.reshape(out.rgb, (r, r, 3)).detach(),
                                  ad.reshape(out.mask, (r, r)).detach()))
                reals = [(view.rgb, view.rgb, view.mask)
                         for view in dataset.ortho_views()]
                disc_params = discriminator_tensors(state.discriminator)
                l_d = discriminator_loss(state.discriminator, fakes, reals, weights)
                ad.zero_grad(disc_params)
                l_d.backward()
                state.adam_d.lr = config.learning_rate(step, config.lr_discriminator)
                adam_step(state.adam_d, disc_params)
                values["l_d"] = float(l_d.item())
            values["l_total"] = (values["l_rec"] + values.get("l_g", 0.0)
                                 + values.get("l_d", 0.0) + values["l_reg"])
            line = _loss_line(step, values)
            state.loss_log.append(line)
            if log_fh:
                log_fh.write(line + "\n")
            state.step += 1
    finally:
        if log_fh:
            log_fh.close()
    return state


# -- checkpointing ---------------------------------------------------------------


def save_state(state: FitState, prefix: str) -> None:
    """Checkpoint parameters, optimizer moments and step under ``prefix``."""
    named = dict(state.generator_params())
    if state.config.use_encoder:
        named.update(triplane_tensors(state.dtp))  # initial planes kept for reload
    if state.discriminator is not None:
        named.update(discriminator_tensors(state.discriminator))
    named["trainer.step"] = np.array(float(state.step))
    for group, adam in (("g", state.adam_g), ("d", state.adam_d)):
        if adam is None:
            continue
        named[f"adam.{group}.step"] = np.array(float(adam.step))
        for key, value in adam.m.items():
            named[f"adam.{group}.m.{key}"] = value
        for key, value in adam.v.items():
            named[f"adam.{group}.v.{key}"] = value
    save_tensors(prefix, named)
    state.config.to_file(prefix + ".config.txt")


def load_state(prefix: str) -> FitState:
    config = RunConfig.from_file(prefix + ".config.txt")
    named = load_tensors(prefix)
    dtp = load_triplane_tensors(named, extent=config.plane_extent)
    fusion = (load_fusion_tensors(named) if "fusion.wq" in named
              else create_fusion_params(config.plane_channels))
    decoder = load_decoder_tensors(named)
    encoder = None
    if config.use_encoder:
        encoder = load_encoder_tensors(named, config.plane_resolution,
                                       config.plane_channels, config.plane_extent)
    discriminator = (load_discriminator_tensors(named)
                     if "disc.head.w" in named else None)
    state = FitState(config=config, dtp=dtp, fusion=fusion, decoder=decoder,
                     encoder=encoder, discriminator=discriminator,
                     adam_g=AdamState(lr=config.lr_generator),
                     adam_d=AdamState(lr=config.lr_discriminator)
                     if discriminator is not None else None,
                     step=int(named["trainer.step"]))
    for group, adam in (("g", state.adam_g), ("d", state.adam_d)):
        if adam is None or f"adam.{group}.step" not in named:
            continue
        adam.step = int(named[f"adam.{group}.step"])
        prefix_m = f"adam.{group}.m."
        prefix_v = f"adam.{group}.v."
        for key, value in named.items():
            if key.startswith(prefix_m):
                adam.m[key[len(prefix_m):]] = value.copy()
            elif key.startswith(prefix_v):
                adam.v[key[len(prefix_v):]] = value.copy()
    return state


# -- evaluation renders and ablation ------------------------------------------------


def render_eval_views(state: FitState, cameras, chunk_rays: int = 2048):
    """Full-resolution, gradient-free renders from the fitted field."""
    dtp = state.field_triplanes()
    background = (state.config.background,) * 3
    outs = []
    with ad.no_grad():
        for cam in cameras:
            outs.append(render_view(cam, dtp, state.fusion, state.decoder,
                                    samples_per_ray=state.config.samples_per_ray,
                                    seed=None, mode=state.config.fusion_mode,
                                    background=background, chunk_rays=chunk_rays))
    return outs


VIEW_LABELS = {"right": 270.0, "left": 90.0, "front": 0.0, "back": 180.0}


def ablate(dataset, config: RunConfig, out_dir: str | None = None) -> dict:
    """Fit the method variants under identical seeds/budgets and tabulate.

    Rows: full (direction-aware attention), attention off (concat), and
    shared-encoder (encoder mode only). Columns: per-view psnr / ssim /
    perceptual proxy in right/left/front/back order, plus the back-view
    ghost correlation.
    """
    from .metrics import evaluate_views, format_ablation_table

    variants = [("full", replace(config)),
                ("no_attention", replace(config, fusion_mode="concat"))]
    if config.use_encoder:
        variants.append(("shared_encoder", replace(config, shared_encoder=True)))
    rows = {}
    for name, variant in variants:
        state = fit(dataset, variant)
        rows[name] = evaluate_views(state, dataset)
    table = format_ablation_table(rows)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "ablation.tsv"), "w", encoding="ascii") as fh:
            fh.write(table)
    return {"rows": rows, "table": table}
