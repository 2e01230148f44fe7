"""Direction-aware fusion of front/back point features.

Two interpretations of the attention are provided, selected by ``mode``:

* ``as_written`` — queries come from the ray directions, keys/values from
  the channel-concatenated front/back features, and a full NxN attention
  matrix mixes the N points of one group (one ray's samples during
  rendering). The output is projected by a learnable 32x32 matrix.
* ``per_point`` — each point carries exactly two tokens, one holding its
  front feature (back half zeroed) and one holding its back feature, and
  the direction-derived query softly picks between them. This realizes
  view-dependent front/back weighting point by point.

``concat_fusion`` is the no-attention baseline (plain channel
concatenation) used to demonstrate texture leakage into opposite views.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

DEFAULT_WIDTH = 32
FUSION_MODES = ("as_written", "per_point")

_CHECKPOINT_FIELDS = (("wq", "w_q"), ("bq", "b_q"), ("wk", "w_k"), ("bk", "b_k"),
                      ("wv", "w_v"), ("bv", "b_v"), ("wl", "w_out"))


@dataclass
class FusionParams:
    w_q: Tensor  # [3, W] direction -> query
    b_q: Tensor
    w_k: Tensor  # [2C, W]
    b_k: Tensor
    w_v: Tensor  # [2C, W]
    b_v: Tensor
    w_out: Tensor  # [W, W], applied on the right as out @ w_out.T

    def __post_init__(self):
        w = self.width
        if self.w_q.shape[0] != 3 or self.w_q.shape[1] != w:
            raise ValueError(f"w_q must be [3, {w}], got {self.w_q.shape}")
        if self.w_k.shape != self.w_v.shape:
            raise ValueError("w_k and w_v must agree in shape")
        if self.w_out.shape != (w, w):
            raise ValueError(f"w_out must be [{w}, {w}], got {self.w_out.shape}")

    @property
    def width(self) -> int:
        return self.w_out.shape[0]

    @property
    def key_dim(self) -> int:
        return self.w_k.shape[1]

    @property
    def feature_channels(self) -> int:
        return self.w_k.shape[0] // 2


def create_fusion_params(feature_channels: int = 16,
                         width: int = DEFAULT_WIDTH,
                         rng: np.random.Generator | None = None,
                         init_scale: float | None = None) -> FusionParams:
    rng = rng or np.random.default_rng(0)
    f = 2 * feature_channels
    scale_in = init_scale if init_scale is not None else 1.0 / np.sqrt(f)
    scale_q = init_scale if init_scale is not None else 1.0 / np.sqrt(3.0)

    def weight(shape, scale):
        return Tensor(scale * rng.standard_normal(shape), requires_grad=True)

    return FusionParams(
        w_q=weight((3, width), scale_q),
        b_q=Tensor(np.zeros(width), requires_grad=True),
        w_k=weight((f, width), scale_in),
        b_k=Tensor(np.zeros(width), requires_grad=True),
        w_v=weight((f, width), scale_in),
        b_v=Tensor(np.zeros(width), requires_grad=True),
        w_out=weight((width, width), 1.0 / np.sqrt(width)),
    )


def concat_fusion(f_front, f_back) -> Tensor:
    """Channel concatenation with no mixing: the ablation baseline."""
    f_front = f_front if isinstance(f_front, Tensor) else Tensor(f_front)
    f_back = f_back if isinstance(f_back, Tensor) else Tensor(f_back)
    if f_front.shape[0] != f_back.shape[0]:
        raise ad.DimensionError(
            f"concat_fusion: point counts differ, {f_front.shape} vs {f_back.shape}")
    return ad.concat([f_front, f_back], axis=-1)


def split_fused(fused: Tensor) -> tuple[Tensor, Tensor]:
    """Inverse of concat_fusion."""
    half = fused.shape[-1] // 2
    return ad.narrow(fused, -1, 0, half), ad.narrow(fused, -1, half, half)


def _prepare_dirs(dirs, n: int) -> np.ndarray:
    d = dirs.data if isinstance(dirs, Tensor) else np.asarray(dirs, dtype=np.float64)
    if d.shape != (n, 3):
        raise ad.DimensionError(f"dirs must be [{n}, 3], got {d.shape}")
    norms = np.linalg.norm(d, axis=1)
    nonzero = norms > 0.0
    if np.any(np.abs(norms[nonzero] - 1.0) > 1e-6):
        warnings.warn("ray directions are not unit length; normalizing",
                      RuntimeWarning, stacklevel=3)
        d = d.copy()
        d[nonzero] = d[nonzero] / norms[nonzero, None]
    return d


def direction_aware_attention(params: FusionParams, f_front, f_back, dirs,
                              mode: str = "as_written") -> Tensor:
    """Fuse front/back features conditioned on ray direction.

    Inputs are [N, C] feature rows and [N, 3] unit directions (non-unit
    rows are normalized with a warning; exactly-zero rows are allowed
    and left as zero queries). Returns fused features [N, W].
    """
    if mode not in FUSION_MODES:
        raise ValueError(f"unknown fusion mode {mode!r}")
    f_front = f_front if isinstance(f_front, Tensor) else Tensor(f_front)
    f_back = f_back if isinstance(f_back, Tensor) else Tensor(f_back)
    n = f_front.shape[0]
    if n == 0:
        return Tensor(np.zeros((0, params.width)))
    d = _prepare_dirs(dirs, n)
    if mode == "as_written":
        fused = fuse_groups(params,
                            ad.reshape(f_front, (1, n, f_front.shape[1])),
                            ad.reshape(f_back, (1, n, f_back.shape[1])),
                            d.reshape(1, n, 3))
        return ad.reshape(fused, (n, params.width))
    return _fuse_per_point(params, f_front, f_back, d)


def fuse_groups(params: FusionParams, f_front, f_back, dirs) -> Tensor:
    """NxN attention applied independently inside each group.

    ``f_front``/``f_back`` are [B, S, C] and ``dirs`` [B, S, 3]; during
    rendering a group is one ray's sample set. Returns [B, S, W].
    """
    b, s, c = f_front.shape
    flat_front = ad.reshape(f_front, (b * s, c))
    flat_back = ad.reshape(f_back, (b * s, c))
    features = ad.concat([flat_front, flat_back], axis=-1)
    dirs2 = np.asarray(dirs, dtype=np.float64).reshape(b * s, 3)

    q = ad.linear(Tensor(dirs2), params.w_q, params.b_q)
    k = ad.linear(features, params.w_k, params.b_k)
    v = ad.linear(features, params.w_v, params.b_v)
    w = params.width
    q3 = ad.reshape(q, (b, s, w))
    k3 = ad.reshape(k, (b, s, w))
    v3 = ad.reshape(v, (b, s, w))
    scores = ad.mul(ad.matmul(q3, ad.permute(k3, (0, 2, 1))),
                    1.0 / np.sqrt(params.key_dim))
    attn = ad.softmax_rows(scores)          # [B, S, S]
    mixed = ad.matmul(attn, v3)             # [B, S, W]
    flat = ad.reshape(mixed, (b * s, w))
    out = ad.linear(flat, ad.permute(params.w_out, (1, 0)))
    return ad.reshape(out, (b, s, w))


def _per_point_scores(params: FusionParams, f_front: Tensor, f_back: Tensor,
                      dirs: np.ndarray) -> Tensor:
    """Softmax weights [N, 2] over the per-point (front, back) tokens.

    The front token is (f_front ‖ 0) and the back token (0 ‖ f_back), so
    projecting a token reduces to applying the matching half of the
    weight matrix; no zero-padded concatenation is materialized.
    """
    n, c = f_front.shape
    q = ad.linear(ad.constant(dirs), params.w_q, params.b_q)
    k_front = ad.linear(f_front, ad.narrow(params.w_k, 0, 0, c), params.b_k)
    k_back = ad.linear(f_back, ad.narrow(params.w_k, 0, c, c), params.b_k)
    scale = 1.0 / np.sqrt(params.key_dim)
    s_front = ad.mul(ad.rowwise_dot(q, k_front), scale)
    s_back = ad.mul(ad.rowwise_dot(q, k_back), scale)
    scores = ad.concat([ad.reshape(s_front, (n, 1)), ad.reshape(s_back, (n, 1))],
                       axis=1)
    return ad.softmax_rows(scores)


def _fuse_per_point(params: FusionParams, f_front: Tensor, f_back: Tensor,
                    dirs: np.ndarray) -> Tensor:
    n, c = f_front.shape
    attn = _per_point_scores(params, f_front, f_back, dirs)       # [N, 2]
    v_front = ad.linear(f_front, ad.narrow(params.w_v, 0, 0, c), params.b_v)
    v_back = ad.linear(f_back, ad.narrow(params.w_v, 0, c, c), params.b_v)
    mixed = ad.add(
        ad.scale_rows(v_front, ad.reshape(ad.narrow(attn, 1, 0, 1), (n,))),
        ad.scale_rows(v_back, ad.reshape(ad.narrow(attn, 1, 1, 1), (n,))))
    return ad.linear(mixed, ad.permute(params.w_out, (1, 0)))


def per_point_weights(params: FusionParams, f_front, f_back, dirs) -> np.ndarray:
    """Diagnostic: attention weights [N, 2] on the (front, back) tokens."""
    f_front = f_front if isinstance(f_front, Tensor) else Tensor(f_front)
    f_back = f_back if isinstance(f_back, Tensor) else Tensor(f_back)
    d = _prepare_dirs(dirs, f_front.shape[0])
    with ad.no_grad():
        attn = _per_point_scores(params, f_front, f_back, d)
    return attn.data.copy()


def fusion_tensors(params: FusionParams) -> dict:
    """Checkpoint layout: fusion.wq/bq/wk/bk/wv/bv/wl."""
    return {f"fusion.{key}": getattr(params, attr) for key, attr in _CHECKPOINT_FIELDS}


def load_fusion_tensors(named: dict) -> FusionParams:
    kwargs = {attr: Tensor(named[f"fusion.{key}"], requires_grad=True)
              for key, attr in _CHECKPOINT_FIELDS}
    return FusionParams(**kwargs)
