"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` wraps a dense float array. Every operation records
parent links and a local adjoint rule; calling ``backward()`` on a
scalar result walks the recorded graph once in reverse topological
order and accumulates gradients into the leaf tensors that were created
with ``requires_grad=True``.

The op set is deliberately small: same-shape elementwise arithmetic
(plus python scalars), a few shape/reduction ops, (batched) matmul,
row softmax, bilinear plane sampling, exclusive cumulative sums,
edge-padded 2-d convolution and bilinear upsampling. There is no
general broadcasting, no GPU path and no graph rewriting. Arrays are
float64 by default; float32 can be selected for speed at the cost of
looser gradient checks.
"""

from __future__ import annotations

import contextlib
import functools

import numpy as np
import scipy.sparse as _sparse

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_NAN_CHECKS = False


def set_default_dtype(dtype) -> None:
    """Select float64 (default, verification) or float32 (fast) storage."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


def set_nan_checks(enabled: bool) -> None:
    """Assert finiteness of every op output (slow; meant for test runs)."""
    global _NAN_CHECKS
    _NAN_CHECKS = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation renders)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Dense n-d float array, optionally tracked for differentiation.

    Tensors are immutable by convention once created; only an optimizer
    update step may overwrite ``data`` in place. ``grad`` accumulates on
    leaf tensors (no parents, ``requires_grad=True``) across backward
    passes until cleared with :func:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=_DEFAULT_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- introspection ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Copy of the values with no graph link and no gradient."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- autodiff ----------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        Graph.trace(self).run_backward(self)


class Graph:
    """Topologically ordered record of the ops that produced a tensor.

    ``nodes`` lists every tensor reachable from the root with parents
    preceding their consumers; a backward pass visits each node exactly
    once in reverse order, which makes replay deterministic.
    """

    __slots__ = ("nodes",)

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root: Tensor) -> "Graph":
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def run_backward(self, root: Tensor) -> None:
        adjoint = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            grad = adjoint.pop(id(node), None)
            if grad is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = grad.copy()
                    else:
                        node.grad = node.grad + grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + parent_grad
                else:
                    adjoint[key] = parent_grad


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _as_array(value) -> np.ndarray:
    if isinstance(value, Tensor):
        return value.data
    return np.asarray(value, dtype=_DEFAULT_DTYPE)


def _from_op(data, parents, backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
    out.grad = None
    if _NAN_CHECKS and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite values produced by op {op!r}")
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._op = op
    return out


def parameter(data) -> Tensor:
    """Leaf tensor that participates in gradient accumulation."""
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    """Non-differentiable tensor wrapping ``data`` without copying."""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
    out.requires_grad = False
    out.grad = None
    out._parents = ()
    out._backward = None
    out._op = "constant"
    return out


def zero_grad(params) -> None:
    """Clear accumulated gradients on an iterable (or dict) of tensors."""
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape {a.shape} does not match {b.shape}")


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    if isinstance(a, (int, float)):
        a, b = b, a
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _from_op(a.data + b, (a,), lambda g: (g,), "add_scalar")
    b = _as_tensor(b)
    _require_same_shape(a, b, "add")
    return _from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Tensor:
    if isinstance(a, (int, float)):
        b = _as_tensor(b)
        return _from_op(a - b.data, (b,), lambda g: (-g,), "sub_from_scalar")
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _from_op(a.data - b, (a,), lambda g: (g,), "sub_scalar")
    b = _as_tensor(b)
    _require_same_shape(a, b, "sub")
    return _from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Tensor:
    if isinstance(a, (int, float)):
        a, b = b, a
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _from_op(a.data * b, (a,), lambda g, s=float(b): (g * s,), "mul_scalar")
    b = _as_tensor(b)
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _from_op(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a, b) -> Tensor:
    if isinstance(a, (int, float)):
        b = _as_tensor(b)
        bd = b.data
        return _from_op(a / bd, (b,),
                        lambda g, s=float(a): (-g * s / (bd * bd),), "scalar_div")
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        return _from_op(a.data / b, (a,), lambda g, s=float(b): (g / s,), "div_scalar")
    b = _as_tensor(b)
    _require_same_shape(a, b, "div")
    ad, bd = a.data, b.data
    return _from_op(ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)), "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _from_op(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    return _from_op(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _from_op(out, (a,), lambda g: (g / (2.0 * out),), "sqrt")


def absolute(a) -> Tensor:
    # Subgradient at 0 is taken as 0 (symmetric central differences agree).
    a = _as_tensor(a)
    sign = np.sign(a.data)
    return _from_op(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _as_tensor(a)
    ad_ = a.data
    scale = (ad_ > 0.0).astype(ad_.dtype)
    scale *= 1.0 - slope
    scale += slope
    return _from_op(ad_ * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def softplus(a) -> Tensor:
    a = _as_tensor(a)
    out = np.logaddexp(0.0, a.data)
    sig = _stable_sigmoid(a.data)
    return _from_op(out, (a,), lambda g: (g * sig,), "softplus")


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # Branch-free stable form: exp of -|x| never overflows.
    e = np.exp(-np.abs(x))
    upper = 1.0 / (1.0 + e)          # value for x >= 0
    flip = x < 0
    return upper + flip * (1.0 - 2.0 * upper)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = _stable_sigmoid(a.data)
    return _from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


# -- reductions --------------------------------------------------------------


def _expand_reduced(grad: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(grad, shape).copy() if grad.shape != shape else grad
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape).copy()


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        return (_expand_reduced(np.asarray(g), shape, axis, keepdims),)

    return _from_op(out, (a,), backward, "sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    out = np.mean(a.data, axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else int(np.prod(
        [shape[ax % len(shape)] for ax in (axis if isinstance(axis, tuple) else (axis,))]))

    def backward(g):
        return (_expand_reduced(np.asarray(g), shape, axis, keepdims) / count,)

    return _from_op(out, (a,), backward, "mean")


# -- shape ops ----------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    original = a.shape
    return _from_op(a.data.reshape(shape), (a,),
                    lambda g: (g.reshape(original),), "reshape")


def permute(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _from_op(a.data.transpose(axes), (a,),
                    lambda g: (g.transpose(inverse),), "permute")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for start, stop in zip(offsets[:-1], offsets[1:]):
            slicer[axis] = slice(start, stop)
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _from_op(out, tuple(tensors), backward, "concat")


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _as_tensor(a)
    slicer = [slice(None)] * a.ndim
    slicer[axis] = slice(start, start + length)
    slicer = tuple(slicer)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[slicer] = g
        return (full,)

    return _from_op(a.data[slicer], (a,), backward, "narrow")


def tile_last(a, count: int) -> Tensor:
    """Repeat a trailing singleton axis ``count`` times."""
    a = _as_tensor(a)
    if a.shape[-1] != 1:
        raise DimensionError(f"tile_last: trailing axis must be 1, got {a.shape}")
    out = np.repeat(a.data, count, axis=-1)
    return _from_op(out, (a,), lambda g: (g.sum(axis=-1, keepdims=True),), "tile_last")


def scale_rows(x, s) -> Tensor:
    """Multiply each trailing vector of ``x[..., C]`` by the scalar ``s[...]``."""
    x, s = _as_tensor(x), _as_tensor(s)
    if x.shape[:-1] != s.shape:
        raise DimensionError(f"scale_rows: {x.shape} rows do not match scales {s.shape}")
    xd, sd = x.data, s.data[..., None]
    out = xd * sd

    def backward(g):
        gx = g * sd if x.requires_grad else None
        gs = (g * xd).sum(axis=-1) if s.requires_grad else None
        return (gx, gs)

    return _from_op(out, (x, s), backward, "scale_rows")


def rowwise_dot(a, b) -> Tensor:
    """Dot product of corresponding trailing vectors: out[...] = a[...,:].b[...,:]."""
    a, b = _as_tensor(a), _as_tensor(b)
    _require_same_shape(a, b, "rowwise_dot")
    ad_, bd = a.data, b.data
    out = np.einsum("...c,...c->...", ad_, bd, optimize=True)

    def backward(g):
        ga = g[..., None] * bd if a.requires_grad else None
        gb = g[..., None] * ad_ if b.requires_grad else None
        return (ga, gb)

    return _from_op(out, (a, b), backward, "rowwise_dot")


# -- linear algebra ------------------------------------------------------------

_GEMM_BLOCK = 16384


def _gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b, row-blocked: huge-M tall-skinny products hit slow BLAS paths."""
    m = a.shape[0]
    if m <= 2 * _GEMM_BLOCK:
        return a @ b
    out = np.empty((m, b.shape[1]), dtype=np.result_type(a, b))
    for i in range(0, m, _GEMM_BLOCK):
        np.matmul(a[i:i + _GEMM_BLOCK], b, out=out[i:i + _GEMM_BLOCK])
    return out


def _gemm_accumulate(a_t: np.ndarray, g: np.ndarray) -> np.ndarray:
    """a_t.T @ g with the huge shared dimension reduced block by block."""
    m = a_t.shape[0]
    if m <= 2 * _GEMM_BLOCK:
        return a_t.T @ g
    out = np.zeros((a_t.shape[1], g.shape[1]), dtype=np.result_type(a_t, g))
    for i in range(0, m, _GEMM_BLOCK):
        out += a_t[i:i + _GEMM_BLOCK].T @ g[i:i + _GEMM_BLOCK]
    return out


def matmul(a, b) -> Tensor:
    """2-d or batch-stacked 3-d matrix product (no implicit broadcasting)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim not in (2, 3) or b.ndim != a.ndim:
        raise DimensionError(f"matmul: expects matching 2-d or 3-d, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2] or (a.ndim == 3 and a.shape[0] != b.shape[0]):
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        ga = g @ bd.swapaxes(-1, -2) if a.requires_grad else None
        gb = ad.swapaxes(-1, -2) @ g if b.requires_grad else None
        return (ga, gb)

    return _from_op(out, (a, b), backward, "matmul")


def linear(x, w, b=None) -> Tensor:
    """Affine map of row vectors: out[i] = x[i] @ w + b."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: x {x.shape} incompatible with w {w.shape}")
    xd, wd = x.data, w.data
    out = _gemm(xd, wd)
    if b is None:
        def backward(g):
            gx = _gemm(g, wd.T) if x.requires_grad else None
            gw = _gemm_accumulate(xd, g) if w.requires_grad else None
            return (gx, gw)

        return _from_op(out, (x, w), backward, "linear")

    b = _as_tensor(b)
    if b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not match width {w.shape[1]}")
    out += b.data

    def backward(g):
        gx = _gemm(g, wd.T) if x.requires_grad else None
        gw = _gemm_accumulate(xd, g) if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return (gx, gw, gb)

    return _from_op(out, (x, w, b), backward, "linear")


def softmax_rows(a) -> Tensor:
    """Softmax along the last axis, stabilized by per-row max subtraction."""
    a = _as_tensor(a)
    if a.ndim < 1 or a.shape[-1] < 1:
        raise DimensionError(f"softmax_rows: needs a non-empty last axis, got {a.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return ((g - inner) * out,)

    return _from_op(out, (a,), backward, "softmax_rows")


# -- sampling -------------------------------------------------------------------


def _bilinear_coords(uv: np.ndarray, resolution: int):
    """Map uv in [-1, 1] onto texel indices/weights; out of range clamps."""
    grid = (np.clip(uv, -1.0, 1.0) + 1.0) * 0.5 * (resolution - 1)
    i0 = np.clip(np.floor(grid).astype(np.int64), 0, resolution - 2)
    frac = grid - i0
    return i0, frac


def bilinear_sample(plane, uv) -> Tensor:
    """Bilinearly interpolate ``plane[R, R, C]`` at ``uv`` in [-1, 1]^2.

    uv coordinates are treated as constants: the gradient is defined with
    respect to the plane contents only. The first uv coordinate indexes
    the first plane axis. Internally the four-texel interpolation is one
    sparse row-stochastic matrix, so the backward scatter is its
    transpose product.
    """
    plane = _as_tensor(plane)
    uv_arr = _as_array(uv)
    if plane.ndim != 3 or plane.shape[0] != plane.shape[1]:
        raise DimensionError(f"bilinear_sample: plane must be [R, R, C], got {plane.shape}")
    if plane.shape[0] < 2:
        raise DimensionError("bilinear_sample: plane resolution must be >= 2")
    if uv_arr.ndim != 2 or uv_arr.shape[1] != 2:
        raise DimensionError(f"bilinear_sample: uv must be [N, 2], got {uv_arr.shape}")

    r, channels = plane.shape[0], plane.shape[2]
    n = uv_arr.shape[0]
    if n == 0:
        return _from_op(np.zeros((0, channels), dtype=plane.data.dtype),
                        (plane,),
                        lambda g: (np.zeros_like(plane.data),), "bilinear_sample")
    i0, fu = _bilinear_coords(uv_arr[:, 0], r)
    j0, fv = _bilinear_coords(uv_arr[:, 1], r)
    base = i0 * r + j0
    dtype = plane.data.dtype
    indices = np.empty((n, 4), dtype=np.int64)
    indices[:, 0] = base
    indices[:, 1] = base + 1
    indices[:, 2] = base + r
    indices[:, 3] = base + r + 1
    data = np.empty((n, 4), dtype=dtype)
    data[:, 0] = (1.0 - fu) * (1.0 - fv)
    data[:, 1] = (1.0 - fu) * fv
    data[:, 2] = fu * (1.0 - fv)
    data[:, 3] = fu * fv
    sampler = _sparse.csr_matrix((data.reshape(-1), indices.reshape(-1),
                                  np.arange(n + 1, dtype=np.int64) * 4),
                                 shape=(n, r * r))
    out = sampler @ plane.data.reshape(r * r, channels)

    def backward(g):
        return ((sampler.T @ g).reshape(r, r, channels),)

    return _from_op(out, (plane,), backward, "bilinear_sample")


# -- scans ------------------------------------------------------------------------


def cumsum_exclusive(a, axis: int = -1) -> Tensor:
    """out[..., i] = sum of entries strictly before i along ``axis``."""
    a = _as_tensor(a)
    inclusive = np.cumsum(a.data, axis=axis)
    out = np.zeros_like(a.data)
    head = [slice(None)] * a.ndim
    tail = [slice(None)] * a.ndim
    head[axis] = slice(1, None)
    tail[axis] = slice(None, -1)
    out[tuple(head)] = inclusive[tuple(tail)]

    def backward(g):
        flipped = np.flip(g, axis=axis)
        suffix = np.cumsum(flipped, axis=axis)
        shifted = np.zeros_like(g)
        shifted[tuple(head)] = suffix[tuple(tail)]
        return (np.flip(shifted, axis=axis),)

    return _from_op(out, (a,), backward, "cumsum_exclusive")


# -- image ops ---------------------------------------------------------------------


def _conv_windows(padded: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    return windows[::stride, ::stride]  # [Ho, Wo, C, kh, kw]


def _fold_edge_padding(grad_padded: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Collapse gradient w.r.t. replicated border texels onto their sources."""
    g = grad_padded
    if ph:
        g[ph] += g[:ph].sum(axis=0)
        g[-ph - 1] += g[-ph:].sum(axis=0)
        g = g[ph:-ph]
    if pw:
        g[:, pw] += g[:, :pw].sum(axis=1)
        g[:, -pw - 1] += g[:, -pw:].sum(axis=1)
        g = g[:, pw:-pw]
    return g


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """Edge-padded 2-d convolution of ``x[H, W, Cin]`` with ``w[kh, kw, Cin, Cout]``.

    Padding keeps constant inputs constant (replicate borders); output is
    [ceil(H / stride), ceil(W / stride), Cout] for odd kernels.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d: expects x [H, W, Cin], w [kh, kw, Cin, Cout]; "
                             f"got {x.shape}, {w.shape}")
    if x.shape[2] != w.shape[2]:
        raise DimensionError(f"conv2d: channel mismatch {x.shape} vs {w.shape}")
    kh, kw, cin, cout = w.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)), mode="edge")
    windows = _conv_windows(padded, kh, kw, stride)
    # windows axes: [Ho, Wo, Cin, kh, kw]; contract (kh, kw, Cin).
    out = np.tensordot(windows, w.data, axes=((3, 4, 2), (0, 1, 2)))
    ho, wo = out.shape[:2]
    parents = [x, w]
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (cout,):
            raise DimensionError(f"conv2d: bias {b.shape} does not match Cout {cout}")
        out = out + b.data
        parents.append(b)

    wd = w.data
    in_shape = padded.shape

    def backward(g):
        gx = None
        if x.requires_grad:
            gp = np.zeros(in_shape, dtype=g.dtype)
            for ki in range(kh):
                for kj in range(kw):
                    patch = g @ wd[ki, kj].T  # [Ho, Wo, Cin]
                    gp[ki:ki + ho * stride:stride, kj:kj + wo * stride:stride] += patch
            gx = _fold_edge_padding(gp, ph, pw)
        gw = (np.tensordot(windows, g, axes=((0, 1), (0, 1))).transpose(1, 2, 0, 3)
              if w.requires_grad else None)
        if b is None:
            return (gx, gw)
        gb = g.sum(axis=(0, 1)) if b.requires_grad else None
        return (gx, gw, gb)

    return _from_op(out, tuple(parents), backward, "conv2d")


@functools.lru_cache(maxsize=32)
def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic bilinear resampling matrix with edge clamping."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    i0 = np.floor(src).astype(np.int64)
    frac = src - i0
    lo = np.clip(i0, 0, n_in - 1)
    hi = np.clip(i0 + 1, 0, n_in - 1)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling of ``x[H, W, C]`` to an arbitrary size."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"resize_bilinear: expects [H, W, C], got {x.shape}")
    h, w = x.shape[:2]
    if (out_h, out_w) == (h, w):
        return _from_op(x.data.copy(), (x,), lambda g: (g,), "resize_identity")
    uh = _interp_matrix(out_h, h).astype(x.data.dtype)
    uw = _interp_matrix(out_w, w).astype(x.data.dtype)
    out = np.einsum("ih,hwc,jw->ijc", uh, x.data, uw, optimize=True)

    def backward(g):
        return (np.einsum("ih,ijc,jw->hwc", uh, g, uw, optimize=True),)

    return _from_op(out, (x,), backward, "resize_bilinear")


def upsample_bilinear(x, factor: int) -> Tensor:
    """Bilinear upsampling of ``x[H, W, C]`` by an integer factor."""
    x = _as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"upsample_bilinear: expects [H, W, C], got {x.shape}")
    return resize_bilinear(x, x.shape[0] * factor, x.shape[1] * factor)


# -- verification ------------------------------------------------------------------


def grad_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` is re-evaluated with each parameter entry perturbed by ±eps;
    the relative error is |analytic - fd| / max(1, |fd|), maximized over
    every scalar entry of every parameter.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    tensors = list(params.values()) if isinstance(params, dict) else list(params)
    zero_grad(tensors)
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise FloatingPointError("grad_check: objective is not finite")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in tensors]

    def evaluate() -> float:
        # No no_grad() here: objectives may legitimately run an internal
        # backward pass (e.g. gradient penalties) during evaluation.
        return f().item()

    worst = 0.0
    for p, ga in zip(tensors, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            upper = evaluate()
            flat[i] = saved - eps
            lower = evaluate()
            flat[i] = saved
            fd = (upper - lower) / (2.0 * eps)
            rel = abs(gflat[i] - fd) / max(1.0, abs(fd))
            worst = max(worst, rel)
    return worst
