"""Differentiable primitives and a few compositions built from them."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .core import Primitive, Tensor, apply, as_tensor


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(*shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError as exc:
        raise ShapeError(f"cannot broadcast shapes {shapes}") from exc


# elementwise ---------------------------------------------------------------

def _add_fwd(a, b):
    _broadcast_shape(a.shape, b.shape)
    return a + b


def _add_vjp(g, out, needs, a, b):
    return (_unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None)


def _sub_fwd(a, b):
    _broadcast_shape(a.shape, b.shape)
    return a - b


def _sub_vjp(g, out, needs, a, b):
    return (_unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(-g, b.shape) if needs[1] else None)


def _mul_fwd(a, b):
    _broadcast_shape(a.shape, b.shape)
    return a * b


def _mul_vjp(g, out, needs, a, b):
    return (_unbroadcast(g * b, a.shape) if needs[0] else None,
            _unbroadcast(g * a, b.shape) if needs[1] else None)


def _div_fwd(a, b):
    _broadcast_shape(a.shape, b.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        return a / b


def _div_vjp(g, out, needs, a, b):
    return (_unbroadcast(g / b, a.shape) if needs[0] else None,
            _unbroadcast(-g * a / (b * b), b.shape) if needs[1] else None)


def _relu_fwd(x):
    return np.maximum(x, 0.0)


def _relu_vjp(g, out, needs, x):
    # subgradient at exactly 0 is 0
    return (g * (x > 0),)


ADD = Primitive("add", _add_fwd, _add_vjp)
SUB = Primitive("sub", _sub_fwd, _sub_vjp)
MUL = Primitive("mul", _mul_fwd, _mul_vjp)
DIV = Primitive("div", _div_fwd, _div_vjp)
def _sqrt_fwd(x):
    return np.sqrt(x)


def _sqrt_vjp(g, out, needs, x):
    return (g / (2.0 * out),)


RELU = Primitive("relu", _relu_fwd, _relu_vjp)
SQRT = Primitive("sqrt", _sqrt_fwd, _sqrt_vjp)


def add(a, b) -> Tensor:
    return apply(ADD, (a, b))


def sub(a, b) -> Tensor:
    return apply(SUB, (a, b))


def mul(a, b) -> Tensor:
    return apply(MUL, (a, b))


def div(a, b) -> Tensor:
    return apply(DIV, (a, b))


def relu(x) -> Tensor:
    return apply(RELU, (x,))


def sqrt(x) -> Tensor:
    """Elementwise square root; negative inputs surface as non-finite errors."""
    return apply(SQRT, (x,))


# linear algebra ------------------------------------------------------------

def _matmul_fwd(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def _matmul_vjp(g, out, needs, a, b):
    ga = _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape) if needs[0] else None
    gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape) if needs[1] else None
    return ga, gb


MATMUL = Primitive("matmul", _matmul_fwd, _matmul_vjp)


def matmul(a, b) -> Tensor:
    return apply(MATMUL, (a, b))


def _conv_out(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _conv2d_fwd(x, w, stride=1, pad=0):
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d expects x (N,C,H,W) and w (O,C,kh,kw); got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = _conv_out(h, kh, stride, pad), _conv_out(wd, kw, stride, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {h}x{wd}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    y = cols @ w.reshape(o, -1).T
    return y.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)


def _conv2d_vjp(g, out, needs, x, w, stride=1, pad=0):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = g.shape[2], g.shape[3]
    gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    gx = gw = None
    if needs[1]:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        gw = (gm.T @ cols).reshape(w.shape)
    if needs[0]:
        gcols = (gm @ w.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, pad:pad + h, pad:pad + wd] if pad else gxp
    return gx, gw


CONV2D = Primitive("conv2d", _conv2d_fwd, _conv2d_vjp)


def conv2d(x, w, stride: int = 1, pad: int = 0) -> Tensor:
    return apply(CONV2D, (x, w), stride=stride, pad=pad)


# pooling / normalization ---------------------------------------------------

def _gap_fwd(x):
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects (N,C,H,W), got {x.shape}")
    return x.mean(axis=(2, 3))


def _gap_vjp(g, out, needs, x):
    h, w = x.shape[2], x.shape[3]
    return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)


GAP = Primitive("global_avg_pool", _gap_fwd, _gap_vjp)


def global_avg_pool(x) -> Tensor:
    return apply(GAP, (x,))


def _rownorm_fwd(x, eps=0.0):
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize_rows expects a matrix, got {x.shape}")
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    keep = norm > eps
    return np.where(keep, x / np.where(keep, norm, 1.0), 0.0)


def _rownorm_vjp(g, out, needs, x, eps=0.0):
    norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
    keep = norm > eps
    safe = np.where(keep, norm, 1.0)
    proj = (g * out).sum(axis=1, keepdims=True)
    return (np.where(keep, (g - out * proj) / safe, 0.0),)


ROWNORM = Primitive("l2_normalize_rows", _rownorm_fwd, _rownorm_vjp)


def l2_normalize_rows(x, eps: float = 0.0) -> Tensor:
    """Divide each row by its L2 norm; rows with norm <= eps become zero rows."""
    return apply(ROWNORM, (x,), eps=float(eps))


def _softmax_fwd(x, temperature=1.0, axis=-1):
    z = x / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _softmax_vjp(g, out, needs, x, temperature=1.0, axis=-1):
    return (out * (g - (g * out).sum(axis=axis, keepdims=True)) / temperature,)


def _log_softmax_fwd(x, temperature=1.0, axis=-1):
    z = x / temperature
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def _log_softmax_vjp(g, out, needs, x, temperature=1.0, axis=-1):
    return ((g - np.exp(out) * g.sum(axis=axis, keepdims=True)) / temperature,)


SOFTMAX = Primitive("softmax", _softmax_fwd, _softmax_vjp)
LOG_SOFTMAX = Primitive("log_softmax", _log_softmax_fwd, _log_softmax_vjp)


def softmax(x, temperature: float = 1.0, axis: int = -1) -> Tensor:
    return apply(SOFTMAX, (x,), temperature=float(temperature), axis=axis)


def log_softmax(x, temperature: float = 1.0, axis: int = -1) -> Tensor:
    return apply(LOG_SOFTMAX, (x,), temperature=float(temperature), axis=axis)


# structural ----------------------------------------------------------------

def _concat_fwd(*xs, axis=0):
    try:
        return np.concatenate(xs, axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc


def _concat_vjp(g, out, needs, *xs, axis=0):
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    parts = np.split(g, bounds, axis=axis)
    return tuple(p if need else None for p, need in zip(parts, needs))


def _reshape_fwd(x, shape=()):
    if int(np.prod(shape)) != x.size and -1 not in shape:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    return x.reshape(shape)


def _reshape_vjp(g, out, needs, x, shape=()):
    return (g.reshape(x.shape),)


def _transpose_fwd(x, axes=()):
    return np.transpose(x, axes)


def _transpose_vjp(g, out, needs, x, axes=()):
    return (np.transpose(g, np.argsort(axes)),)


def _index_fwd(x, index=()):
    return np.array(x[index], dtype=np.float64)


def _index_vjp(g, out, needs, x, index=()):
    gx = np.zeros(x.shape)
    np.add.at(gx, index, g)
    return (gx,)


CONCAT = Primitive("concat", _concat_fwd, _concat_vjp)
RESHAPE = Primitive("reshape", _reshape_fwd, _reshape_vjp)
TRANSPOSE = Primitive("transpose", _transpose_fwd, _transpose_vjp)
INDEX = Primitive("index", _index_fwd, _index_vjp)


def concat(xs, axis: int = 0) -> Tensor:
    return apply(CONCAT, tuple(xs), axis=axis)


def reshape(x, shape) -> Tensor:
    return apply(RESHAPE, (x,), shape=tuple(int(s) for s in shape))


def transpose(x, axes) -> Tensor:
    return apply(TRANSPOSE, (x,), axes=tuple(axes))


def index(x, idx) -> Tensor:
    return apply(INDEX, (x,), index=idx)


# reductions ----------------------------------------------------------------

def _expand_like(g, x, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * x.ndim), x.shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x.shape)


def _sum_fwd(x, axis=None, keepdims=False):
    return np.asarray(x.sum(axis=axis, keepdims=keepdims), dtype=np.float64)


def _sum_vjp(g, out, needs, x, axis=None, keepdims=False):
    return (np.array(_expand_like(g, x, axis, keepdims)),)


def _mean_fwd(x, axis=None, keepdims=False):
    return np.asarray(x.mean(axis=axis, keepdims=keepdims), dtype=np.float64)


def _mean_vjp(g, out, needs, x, axis=None, keepdims=False):
    count = x.size // max(out.size, 1) if axis is not None else x.size
    return (np.array(_expand_like(g, x, axis, keepdims)) / count,)


SUM = Primitive("sum", _sum_fwd, _sum_vjp)
MEAN = Primitive("mean", _mean_fwd, _mean_vjp)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return apply(SUM, (x,), axis=axis, keepdims=keepdims)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    return apply(MEAN, (x,), axis=axis, keepdims=keepdims)


# compositions --------------------------------------------------------------

def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with weight stored as (out, in)."""
    y = matmul(x, transpose(weight, (1, 0)))
    return y if bias is None else add(y, bias)


def avg_pool2d(x, k: int = 2) -> Tensor:
    """Non-overlapping k x k average pooling; trailing rows/cols are cropped."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho == 0 or wo == 0:
        return x
    if (ho * k, wo * k) != (h, w):
        x = index(x, (slice(None), slice(None), slice(0, ho * k), slice(0, wo * k)))
    x = reshape(x, (n, c, ho, k, wo, k))
    return mean(x, axis=(3, 5))


def square(x) -> Tensor:
    return mul(x, x)
