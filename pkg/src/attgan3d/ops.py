"""Differentiable operations over 5-axis tensors.

Conventions:
  - convolutions are cross-correlations (no kernel flip);
  - conv weights are [out_ch, in_ch, kd, kh, kw], transposed-conv weights are
    [in_ch, out_ch, kd, kh, kw]; biases are (1, ch, 1, 1, 1) tensors;
  - max reductions route the gradient to the first argmax in row-major order;
  - PReLU/LeakyReLU use the positive-side derivative (1) at exactly 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .tensor import (
    DegenerateBatch,
    DimensionMismatch,
    InvalidGeometry,
    Tensor,
    default_dtype,
    make_node,
)

_AXIS_NAMES = ("n", "c", "d", "h", "w")


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise TypeError(f"mixed tensor dtypes {sorted(map(str, dtypes))}")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    axes = tuple(i for i, (s, gs) in enumerate(zip(shape, g.shape)) if s == 1 and gs > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcastable(a: Tensor, b: Tensor, op: str) -> None:
    for i, (sa, sb) in enumerate(zip(a.data.shape, b.data.shape)):
        if sa != sb and sa != 1 and sb != 1:
            raise DimensionMismatch(
                f"{op}: axis {_AXIS_NAMES[i]} has sizes {sa} vs {sb}"
            )


# ---------------------------------------------------------------------------
# elementwise / structural


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _check_broadcastable(a, b, "add")
    out = a.data + b.data
    return make_node(out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _check_broadcastable(a, b, "sub")
    out = a.data - b.data
    return make_node(out, (a, b), lambda g: (
        _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b)
    _check_broadcastable(a, b, "mul")
    out = a.data * b.data
    return make_node(out, (a, b), lambda g: (
        _unbroadcast(g * b.data, a.data.shape),
        _unbroadcast(g * a.data, b.data.shape)))


def scale(a: Tensor, factor: float) -> Tensor:
    f = a.data.dtype.type(factor)
    return make_node(a.data * f, (a,), lambda g: (g * f,))


def shift(a: Tensor, offset: float) -> Tensor:
    f = a.data.dtype.type(offset)
    return make_node(a.data + f, (a,), lambda g: (g,))


def sum_all(a: Tensor) -> Tensor:
    out = a.data.sum(dtype=a.data.dtype).reshape(1, 1, 1, 1, 1)
    return make_node(out, (a,), lambda g: (np.full_like(a.data, g.reshape(-1)[0]),))


def mean_all(a: Tensor) -> Tensor:
    inv = a.data.dtype.type(1.0 / a.size)
    out = (a.data.sum(dtype=a.data.dtype) * inv).reshape(1, 1, 1, 1, 1)
    return make_node(out, (a,), lambda g: (np.full_like(a.data, g.reshape(-1)[0] * inv),))


def concat(parts: list[Tensor], axis: int = 1) -> Tensor:
    _check_same_dtype(*parts)
    ref = parts[0].data.shape
    for p in parts[1:]:
        for i, (sa, sb) in enumerate(zip(ref, p.data.shape)):
            if i != axis and sa != sb:
                raise DimensionMismatch(
                    f"concat: axis {_AXIS_NAMES[i]} has sizes {sa} vs {sb}")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return make_node(out, tuple(parts), backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    if start < 0 or start + length > a.data.shape[axis]:
        raise DimensionMismatch(
            f"narrow: [{start}, {start + length}) outside axis "
            f"{_AXIS_NAMES[axis]} of size {a.data.shape[axis]}")
    sl = [slice(None)] * 5
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = np.ascontiguousarray(a.data[sl])

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[sl] = g
        return (ga,)

    return make_node(out, (a,), backward)


# ---------------------------------------------------------------------------
# convolutions


def _conv_out_dim(size: int, k: int, s: int, p: int, axis: str) -> int:
    if k > size + 2 * p:
        raise InvalidGeometry(
            f"kernel {k} does not fit padded input {size + 2 * p} on axis {axis}")
    out = (size + 2 * p - k) // s + 1
    if out < 1:
        raise InvalidGeometry(f"empty output on axis {axis}")
    return out


def _as_triplet(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 components, got {v!r}")
    return t


def conv3d(x: Tensor, w: Tensor, b: Tensor, stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    _check_same_dtype(x, w, b)
    stride = _as_triplet(stride)
    padding = _as_triplet(padding)
    if any(s < 1 for s in stride):
        raise InvalidGeometry(f"strides must be >= 1, got {stride}")
    cout, cin = w.data.shape[0], w.data.shape[1]
    if x.data.shape[1] != cin:
        raise DimensionMismatch(
            f"conv3d: axis c has {x.data.shape[1]} input channels, weight expects {cin}")
    if b.data.shape != (1, cout, 1, 1, 1):
        raise DimensionMismatch(
            f"conv3d: axis c bias shape {b.data.shape} != (1,{cout},1,1,1)")
    in_dhw = x.data.shape[2:]
    kdhw = w.data.shape[2:]
    out_dhw = tuple(
        _conv_out_dim(i, k, s, p, ax)
        for i, k, s, p, ax in zip(in_dhw, kdhw, stride, padding, ("d", "h", "w")))

    out = kernels.gather(x.data, w.data, stride, padding, out_dhw)
    out += b.data

    def backward(g):
        g = np.ascontiguousarray(g)
        gx = kernels.scatter(g, w.data, stride, padding, in_dhw)
        gw = kernels.weight_grad(g, x.data, stride, padding, kdhw)
        gb = g.sum(axis=(0, 2, 3, 4)).reshape(1, cout, 1, 1, 1)
        return (gx, gw, gb)

    return make_node(out, (x, w, b), backward)


def conv_transpose3d(x: Tensor, w: Tensor, b: Tensor, stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    _check_same_dtype(x, w, b)
    stride = _as_triplet(stride)
    padding = _as_triplet(padding)
    if any(s < 1 for s in stride):
        raise InvalidGeometry(f"strides must be >= 1, got {stride}")
    cin, cout = w.data.shape[0], w.data.shape[1]
    if x.data.shape[1] != cin:
        raise DimensionMismatch(
            f"conv_transpose3d: axis c has {x.data.shape[1]} input channels, "
            f"weight expects {cin}")
    if b.data.shape != (1, cout, 1, 1, 1):
        raise DimensionMismatch(
            f"conv_transpose3d: axis c bias shape {b.data.shape} != (1,{cout},1,1,1)")
    kdhw = w.data.shape[2:]
    for k, p, ax in zip(kdhw, padding, ("d", "h", "w")):
        if p >= k:
            raise InvalidGeometry(f"padding {p} must be < kernel {k} on axis {ax}")
    in_dhw = x.data.shape[2:]
    out_dhw = tuple(
        (i - 1) * s - 2 * p + k for i, s, p, k in zip(in_dhw, stride, padding, kdhw))
    if min(out_dhw) < 1:
        raise InvalidGeometry(f"empty transposed-conv output {out_dhw}")

    out = kernels.scatter(x.data, w.data, stride, padding, out_dhw)
    out += b.data

    def backward(g):
        g = np.ascontiguousarray(g)
        gx = kernels.gather(g, w.data, stride, padding, in_dhw)
        gw = kernels.weight_grad(x.data, g, stride, padding, kdhw)
        gb = g.sum(axis=(0, 2, 3, 4)).reshape(1, cout, 1, 1, 1)
        return (gx, gw, gb)

    return make_node(out, (x, w, b), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2D convolution on frames represented as depth-1 tensors."""
    if x.data.shape[2] != 1:
        raise DimensionMismatch(f"conv2d: axis d must be 1, got {x.data.shape[2]}")
    if w.data.shape[2] != 1:
        raise DimensionMismatch(f"conv2d: axis d kernel must be 1, got {w.data.shape[2]}")
    sh, sw = stride
    ph, pw = padding
    return conv3d(x, w, b, stride=(1, sh, sw), padding=(0, ph, pw))


# ---------------------------------------------------------------------------
# pooling


def global_pool3d(x: Tensor, mode: str) -> Tensor:
    n, c, d, h, w = x.data.shape
    if mode == "avg":
        out = x.data.mean(axis=(2, 3, 4), keepdims=True)
        inv = x.data.dtype.type(1.0 / (d * h * w))
        return make_node(out, (x,), lambda g: (np.broadcast_to(g * inv, x.data.shape).copy(),))
    if mode == "max":
        flat = x.data.reshape(n, c, -1)
        idx = flat.argmax(axis=2)
        out = np.take_along_axis(flat, idx[:, :, None], axis=2).reshape(n, c, 1, 1, 1)

        def backward(g):
            gx = np.zeros_like(flat)
            np.put_along_axis(gx, idx[:, :, None], g.reshape(n, c, 1), axis=2)
            return (gx.reshape(x.data.shape),)

        return make_node(out, (x,), backward)
    raise ValueError(f"unknown pool mode {mode!r}")


def channel_pool(x: Tensor, mode: str) -> Tensor:
    if mode == "avg":
        out = x.data.mean(axis=1, keepdims=True)
        inv = x.data.dtype.type(1.0 / x.data.shape[1])
        return make_node(out, (x,), lambda g: (np.broadcast_to(g * inv, x.data.shape).copy(),))
    if mode == "max":
        idx = x.data.argmax(axis=1, keepdims=True)
        out = np.take_along_axis(x.data, idx, axis=1)

        def backward(g):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, idx, g, axis=1)
            return (gx,)

        return make_node(out, (x,), backward)
    raise ValueError(f"unknown pool mode {mode!r}")


# ---------------------------------------------------------------------------
# activations


def sigmoid(x: Tensor) -> Tensor:
    v = x.data
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),))


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    _check_same_dtype(x, alpha)
    if alpha.data.shape != (1, 1, 1, 1, 1):
        raise DimensionMismatch(f"prelu: alpha must be scalar, got {alpha.data.shape}")
    a = alpha.data.reshape(-1)[0]
    neg = x.data < 0
    out = np.where(neg, a * x.data, x.data)

    def backward(g):
        gx = np.where(neg, a, x.data.dtype.type(1.0)) * g
        ga = (g * x.data * neg).sum(dtype=x.data.dtype).reshape(1, 1, 1, 1, 1)
        return (gx, ga)

    return make_node(out, (x, alpha), backward)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    s = x.data.dtype.type(slope)
    neg = x.data < 0
    out = np.where(neg, s * x.data, x.data)
    return make_node(out, (x,), lambda g: (np.where(neg, s, x.data.dtype.type(1.0)) * g,))


# ---------------------------------------------------------------------------
# normalization / dense


@dataclass
class BatchNormState:
    """Running statistics; mutated by train-mode forwards."""
    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def for_channels(cls, c: int, momentum: float = 0.9, eps: float = 1e-5):
        return cls(mean=np.zeros(c, dtype=np.float64),
                   var=np.ones(c, dtype=np.float64),
                   momentum=momentum, eps=eps)


def batch_norm2d(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
                 train: bool) -> Tensor:
    _check_same_dtype(x, gamma, beta)
    if x.data.shape[2] != 1:
        raise DimensionMismatch(f"batch_norm2d: axis d must be 1, got {x.data.shape[2]}")
    n, c, _, h, w = x.data.shape
    if gamma.data.shape != (1, c, 1, 1, 1) or beta.data.shape != (1, c, 1, 1, 1):
        raise DimensionMismatch("batch_norm2d: axis c gamma/beta shape mismatch")
    dt = x.data.dtype
    axes = (0, 2, 3, 4)
    m = n * h * w
    eps = dt.type(state.eps)

    if train:
        if m < 2:
            raise DegenerateBatch(f"train-mode batch norm needs n*h*w > 1, got {m}")
        mean = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        state.mean[:] = state.momentum * state.mean + (1 - state.momentum) * mean.reshape(-1)
        state.var[:] = state.momentum * state.var + (1 - state.momentum) * var.reshape(-1)
    else:
        mean = state.mean.astype(dt).reshape(1, c, 1, 1, 1)
        var = state.var.astype(dt).reshape(1, c, 1, 1, 1)

    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * ivar
    out = gamma.data * xhat + beta.data

    def backward(g):
        g_gamma = (g * xhat).sum(axis=axes, keepdims=True)
        g_beta = g.sum(axis=axes, keepdims=True)
        gxh = g * gamma.data
        if train:
            # batch statistics participate in the graph
            gx = (gxh - gxh.mean(axis=axes, keepdims=True)
                  - xhat * (gxh * xhat).mean(axis=axes, keepdims=True)) * ivar
        else:
            gx = gxh * ivar
        return (gx.astype(dt, copy=False), g_gamma, g_beta)

    return make_node(out, (x, gamma, beta), backward)


def fully_connected(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = W x + b with vectors on the channel axis: x (N,K,1,1,1), W (M,K,1,1,1)."""
    _check_same_dtype(x, w, b)
    n, k = x.data.shape[0], x.data.shape[1]
    m, kw_ = w.data.shape[0], w.data.shape[1]
    if x.data.shape[2:] != (1, 1, 1) or w.data.shape[2:] != (1, 1, 1):
        raise DimensionMismatch("fully_connected: operands must be (·,·,1,1,1)")
    if k != kw_:
        raise DimensionMismatch(f"fully_connected: axis c input {k} vs weight {kw_}")
    if b.data.shape != (1, m, 1, 1, 1):
        raise DimensionMismatch(f"fully_connected: axis c bias shape {b.data.shape}")
    x2 = x.data.reshape(n, k)
    w2 = w.data.reshape(m, kw_)
    out = (x2 @ w2.T + b.data.reshape(1, m)).reshape(n, m, 1, 1, 1)

    def backward(g):
        g2 = g.reshape(n, m)
        gx = (g2 @ w2).reshape(x.data.shape)
        gw = (g2.T @ x2).reshape(w.data.shape)
        gb = g2.sum(axis=0).reshape(b.data.shape)
        return (gx, gw, gb)

    return make_node(out, (x, w, b), backward)
