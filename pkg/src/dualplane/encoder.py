"""Two structurally distinct image encoders feeding the tri-plane fields.

The front path is a shallow stride-1 residual conv stack (small receptive
field, no pooling): it keeps high-frequency content intact. The back path
runs a downsampling base stream through attention pooling and bilinear
re-upsampling, merged with a stride-1 high-resolution stream: it favors
smooth low-frequency structure. A 1x1 "lift" convolution maps either
feature grid onto the three tri-plane planes.

Routing both images through the front path (``shared=True``) is the
single-flag encoder ablation; output shapes are unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .triplane import TriPlane

DEFAULT_CHANNELS = 32


@dataclass
class ConvSpec:
    w: Tensor
    b: Tensor


@dataclass
class EncoderParams:
    front_conv1: ConvSpec   # 3 -> K, 3x3 stride 1
    front_conv2: ConvSpec   # K -> K, 3x3 stride 1 (residual branch)
    back_hr: ConvSpec       # 3 -> K, 3x3 stride 1 (high-res stream)
    back_base: ConvSpec     # 3 -> K, 3x3 stride 1 (before pooling)
    back_score: ConvSpec    # K -> 1, 1x1 (attention-pool scores)
    back_mid: ConvSpec      # K -> K, 3x3 stride 1 (pooled stream)
    lift: ConvSpec          # K -> 3C, 1x1
    grid_resolution: int
    plane_channels: int
    plane_extent: float
    slope: float = 0.2

    @property
    def channels(self) -> int:
        return self.front_conv1.w.shape[3]


def create_encoder_params(grid_resolution: int = 64,
                          channels: int = DEFAULT_CHANNELS,
                          plane_channels: int = 16,
                          plane_extent: float = 1.5,
                          rng: np.random.Generator | None = None) -> EncoderParams:
    rng = rng or np.random.default_rng(0)

    def conv(kh, kw, cin, cout):
        scale = 1.0 / np.sqrt(kh * kw * cin)
        return ConvSpec(w=Tensor(scale * rng.standard_normal((kh, kw, cin, cout)),
                                 requires_grad=True),
                        b=Tensor(np.zeros(cout), requires_grad=True))

    return EncoderParams(
        front_conv1=conv(3, 3, 3, channels),
        front_conv2=conv(3, 3, channels, channels),
        back_hr=conv(3, 3, 3, channels),
        back_base=conv(3, 3, 3, channels),
        back_score=conv(1, 1, channels, 1),
        back_mid=conv(3, 3, channels, channels),
        lift=conv(1, 1, channels, 3 * plane_channels),
        grid_resolution=grid_resolution,
        plane_channels=plane_channels,
        plane_extent=plane_extent,
    )


def _resize_matrixpair(n_out: int, n_in: int):
    from .autodiff import _interp_matrix
    return _interp_matrix(n_out, n_in)


def resize_image(img: np.ndarray, resolution: int) -> np.ndarray:
    """Non-learned bilinear resize of an input image (preprocessing only)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if h == resolution and w == resolution:
        return img
    mh = _resize_matrixpair(resolution, h)
    mw = _resize_matrixpair(resolution, w)
    return np.einsum("ih,hwc,jw->ijc", mh, img, mw, optimize=True)


def _check_square(img: np.ndarray) -> None:
    if img.ndim != 3 or img.shape[0] != img.shape[1] or img.shape[2] != 3:
        raise ad.DimensionError(f"encoder expects a square [H, H, 3] image, got {img.shape}")


def attention_pool2(x: Tensor, score_layer: ConvSpec) -> Tensor:
    """Halve resolution by attention over each 2x2 patch.

    Per-texel scores come from a 1x1 conv; each output texel is its
    patch's score-softmax-weighted feature average. Pooling a constant
    field returns the constant regardless of the scores.
    """
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise ad.DimensionError(f"attention_pool2: needs even spatial dims, got {x.shape}")
    scores = ad.conv2d(x, score_layer.w, score_layer.b)           # [H, W, 1]
    ho, wo = h // 2, w // 2

    def patchify(t: Tensor, ch: int) -> Tensor:
        t = ad.reshape(t, (ho, 2, wo, 2, ch))
        t = ad.permute(t, (0, 2, 1, 3, 4))
        return ad.reshape(t, (ho, wo, 4, ch))

    weights = ad.softmax_rows(ad.reshape(patchify(scores, 1), (ho, wo, 4)))
    weights = ad.tile_last(ad.reshape(weights, (ho, wo, 4, 1)), c)
    return ad.reduce_sum(ad.mul(weights, patchify(x, c)), axis=2)


def encode_front(params: EncoderParams, img) -> Tensor:
    """High-frequency path: stride-1 residual convs at full grid resolution."""
    raw = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    _check_square(raw)
    x = Tensor(resize_image(raw, params.grid_resolution))
    h = ad.leaky_relu(ad.conv2d(x, params.front_conv1.w, params.front_conv1.b),
                      params.slope)
    residual = ad.leaky_relu(ad.conv2d(h, params.front_conv2.w, params.front_conv2.b),
                             params.slope)
    return ad.add(h, residual)


def encode_back(params: EncoderParams, img) -> Tensor:
    """Low-frequency path: pooled-attention base stream plus an HR stream."""
    raw = img.data if isinstance(img, Tensor) else np.asarray(img, dtype=np.float64)
    _check_square(raw)
    x = Tensor(resize_image(raw, params.grid_resolution))
    hr = ad.leaky_relu(ad.conv2d(x, params.back_hr.w, params.back_hr.b), params.slope)
    base = ad.leaky_relu(ad.conv2d(x, params.back_base.w, params.back_base.b),
                         params.slope)
    pooled = attention_pool2(base, params.back_score)
    mid = ad.leaky_relu(ad.conv2d(pooled, params.back_mid.w, params.back_mid.b),
                        params.slope)
    return ad.add(hr, ad.upsample_bilinear(mid, 2))


def lift_to_triplane(params: EncoderParams, grid: Tensor) -> TriPlane:
    """1x1-convolve the feature grid to 3C channels and split into planes.

    Channel blocks map in order: [0, C) -> XY, [C, 2C) -> XZ, [2C, 3C) -> YZ.
    """
    lifted = ad.conv2d(grid, params.lift.w, params.lift.b)
    c = params.plane_channels
    return TriPlane(xy=ad.narrow(lifted, 2, 0, c),
                    xz=ad.narrow(lifted, 2, c, c),
                    yz=ad.narrow(lifted, 2, 2 * c, c),
                    extent=params.plane_extent)


def encode_to_dual_triplane(params: EncoderParams, front_img, back_img,
                            shared: bool = False):
    """Build the dual field from the two input views.

    ``shared=True`` routes both images through the front path (the
    shared-encoder ablation) without changing any shape.
    """
    from .triplane import DualTriPlane

    front_grid = encode_front(params, front_img)
    back_grid = encode_front(params, back_img) if shared else encode_back(params, back_img)
    return DualTriPlane(front=lift_to_triplane(params, front_grid),
                        back=lift_to_triplane(params, back_grid))


_FIELD_NAMES = (("enc.front.conv1", "front_conv1"), ("enc.front.conv2", "front_conv2"),
                ("enc.back.hr", "back_hr"), ("enc.back.base", "back_base"),
                ("enc.back.score", "back_score"), ("enc.back.mid", "back_mid"),
                ("enc.lift", "lift"))


def encoder_tensors(params: EncoderParams) -> dict:
    named = {}
    for key, attr in _FIELD_NAMES:
        layer = getattr(params, attr)
        named[f"{key}.w"] = layer.w
        named[f"{key}.b"] = layer.b
    return named


def load_encoder_tensors(named: dict, grid_resolution: int,
                         plane_channels: int, plane_extent: float) -> EncoderParams:
    kwargs = {}
    for key, attr in _FIELD_NAMES:
        kwargs[attr] = ConvSpec(w=Tensor(named[f"{key}.w"], requires_grad=True),
                                b=Tensor(named[f"{key}.b"], requires_grad=True))
    return EncoderParams(grid_resolution=grid_resolution,
                         plane_channels=plane_channels,
                         plane_extent=plane_extent, **kwargs)
