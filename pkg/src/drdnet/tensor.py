"""From-scratch reverse-mode autodiff on NCHW float tensors.

Every tensor is rank-4 (N, C, H, W); vectors such as biases live as (1, C, 1, 1).
Storage is float32 by default, float64 supported end to end (gradient tests run the
whole graph in float64). Reductions always accumulate in float64 regardless of
storage dtype.

The graph is implicit: each op output keeps references to its parent tensors and a
backward closure, so the tape is rebuilt on every forward pass and freed with the
tensors. backward() topologically sorts from the loss and visits every node exactly
once. No higher-order gradients.

Convolution runs as im2col + one BLAS matmul; its backward is expressed with the
same primitive (transposed kernel for the input gradient, strided slicing for the
weight gradient) instead of a scatter loop, which is what keeps CPU training
tractable.
"""

from __future__ import annotations

import functools
from contextlib import contextmanager

import numpy as np

from .errors import ConfigurationError, DimensionError, UsageError

_FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = [True]


@contextmanager
def no_grad():
    """Disable graph recording inside the context (inference / finite differences)."""
    prev = _grad_enabled[0]
    _grad_enabled[0] = False
    try:
        yield
    finally:
        _grad_enabled[0] = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise DimensionError(f"tensors are NCHW rank-4, got rank {arr.ndim}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.shape != (1, 1, 1, 1):
            raise UsageError(f"item() needs a (1,1,1,1) scalar, got {self.data.shape}")
        return float(self.data[0, 0, 0, 0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return multiply(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__


def scalar(value, dtype=np.float64) -> Tensor:
    return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype))


def _record(out: Tensor, parents, backward_fn) -> Tensor:
    if _grad_enabled[0] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray):
    """Accumulate g into t.grad, casting to t's storage dtype."""
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g over axes that were broadcast up from size 1."""
    if g.shape == tuple(shape):
        return g
    axes = tuple(ax for ax in range(4) if shape[ax] == 1 and g.shape[ax] != 1)
    return g.sum(axis=axes, keepdims=True)


def topo_order(root: Tensor):
    """Ancestors of root, each exactly once, every node after all of its parents."""
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Reverse-mode sweep from a (1,1,1,1) scalar loss.

    Gradients accumulate into every reachable tensor with requires_grad=True;
    tensors outside the loss's ancestry are untouched.
    """
    if loss.data.shape != (1, 1, 1, 1):
        raise UsageError(f"backward root must be a (1,1,1,1) scalar, got {loss.data.shape}")
    order = topo_order(loss)
    loss.grad = np.ones((1, 1, 1, 1), dtype=loss.data.dtype)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# shape algebra

def conv_output_size(size: int, kernel: int, stride: int, dilation: int, padding: int) -> int:
    span = dilation * (kernel - 1) + 1
    out = (size + 2 * padding - span) // stride + 1
    if out <= 0:
        raise ConfigurationError(
            f"conv output collapses: size={size} kernel={kernel} stride={stride} "
            f"dilation={dilation} padding={padding}")
    return out


def same_padding(kernel: int, dilation: int) -> int:
    if kernel % 2 != 1:
        raise ConfigurationError(f"same padding needs an odd kernel, got {kernel}")
    return dilation * (kernel - 1) // 2


# ---------------------------------------------------------------------------
# convolution internals (shared by forward and both gradient paths)

@functools.lru_cache(maxsize=None)
def _col_indices(c_in, kernel, h_out, w_out, stride, dilation):
    i0 = dilation * np.repeat(np.arange(kernel), kernel)
    j0 = dilation * np.tile(np.arange(kernel), kernel)
    i0 = np.tile(i0, c_in)
    j0 = np.tile(j0, c_in)
    i1 = stride * np.repeat(np.arange(h_out), w_out)
    j1 = stride * np.tile(np.arange(w_out), h_out)
    rows = i0[:, None] + i1[None, :]
    cols = j0[:, None] + j1[None, :]
    chan = np.repeat(np.arange(c_in), kernel * kernel)[:, None]
    return chan, rows, cols


def _pad_hw(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _conv_raw(x: np.ndarray, w: np.ndarray, stride: int, dilation: int, padding: int) -> np.ndarray:
    """Plain correlation on arrays: im2col then a single (C_out,K)@(K,N*L) matmul."""
    n, c_in, h, w_in = x.shape
    c_out, _, kernel, _ = w.shape
    h_out = conv_output_size(h, kernel, stride, dilation, padding)
    w_out = conv_output_size(w_in, kernel, stride, dilation, padding)
    x_pad = _pad_hw(x, padding)
    chan, rows, cols = _col_indices(c_in, kernel, h_out, w_out, stride, dilation)
    patches = x_pad[:, chan, rows, cols]                  # (N, C_in*k*k, L)
    k_dim = c_in * kernel * kernel
    mat = patches.transpose(1, 0, 2).reshape(k_dim, n * h_out * w_out)
    out = w.reshape(c_out, k_dim) @ mat
    return out.reshape(c_out, n, h_out * w_out).transpose(1, 0, 2).reshape(n, c_out, h_out, w_out)


def _conv_grad_input(g: np.ndarray, w: np.ndarray, x_shape, stride: int, dilation: int,
                     padding: int) -> np.ndarray:
    """d(conv)/d(input): correlation of the (zero-stuffed) output grad with the
    spatially flipped, channel-transposed kernel."""
    n, c_in, h, w_in = x_shape
    c_out, _, kernel, _ = w.shape
    h_out, w_out = g.shape[2], g.shape[3]
    if stride > 1:
        hd = (h_out - 1) * stride + 1
        wd = (w_out - 1) * stride + 1
        gd = np.zeros((n, c_out, hd, wd), dtype=g.dtype)
        gd[:, :, ::stride, ::stride] = g
    else:
        gd = g
    span = dilation * (kernel - 1)
    gp = _pad_hw(gd, span)
    w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)    # (C_in, C_out, k, k)
    cov = _conv_raw(gp, np.ascontiguousarray(w_flip), 1, dilation, 0)
    dx_pad = np.zeros((n, c_in, h + 2 * padding, w_in + 2 * padding), dtype=g.dtype)
    # stride remainders leave trailing rows/cols no window touched; they stay zero
    dx_pad[:, :, :cov.shape[2], :cov.shape[3]] = cov
    if padding == 0:
        return dx_pad
    return dx_pad[:, :, padding:padding + h, padding:padding + w_in].copy()


def _conv_grad_weight(x: np.ndarray, g: np.ndarray, kernel: int, stride: int, dilation: int,
                      padding: int) -> np.ndarray:
    n, c_in = x.shape[0], x.shape[1]
    c_out, h_out, w_out = g.shape[1], g.shape[2], g.shape[3]
    x_pad = _pad_hw(x, padding)
    g_mat = g.transpose(1, 0, 2, 3).reshape(c_out, n * h_out * w_out)
    gw = np.empty((c_out, c_in, kernel, kernel), dtype=g.dtype)
    h_span = (h_out - 1) * stride + 1
    w_span = (w_out - 1) * stride + 1
    for a in range(kernel):
        for b in range(kernel):
            xs = x_pad[:, :, a * dilation:a * dilation + h_span:stride,
                       b * dilation:b * dilation + w_span:stride]
            xs_mat = xs.transpose(1, 0, 2, 3).reshape(c_in, -1)
            gw[:, :, a, b] = g_mat @ xs_mat.T
    return gw


# ---------------------------------------------------------------------------
# ops

def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1,
           dilation: int = 1, padding: int = 0) -> Tensor:
    """2-D correlation with zero padding. weight is (C_out, C_in, k, k), square
    kernels only; bias (1, C_out, 1, 1)."""
    if not (isinstance(stride, int) and stride >= 1):
        raise ConfigurationError(f"stride must be an int >= 1, got {stride!r}")
    if not (isinstance(dilation, int) and dilation >= 1):
        raise ConfigurationError(f"dilation must be an int >= 1, got {dilation!r}")
    if not (isinstance(padding, int) and padding >= 0):
        raise ConfigurationError(f"padding must be an int >= 0, got {padding!r}")
    c_out, c_in, kernel, kernel2 = weight.shape
    if kernel != kernel2:
        raise DimensionError(f"kernel must be square, got {kernel}x{kernel2}")
    if x.shape[1] != c_in:
        raise DimensionError(
            f"channel axis mismatch: input has C={x.shape[1]}, weight expects C_in={c_in}")
    if bias is not None and bias.shape != (1, c_out, 1, 1):
        raise DimensionError(f"bias must be (1,{c_out},1,1), got {bias.shape}")

    out_data = _conv_raw(x.data, weight.data, stride, dilation, padding)
    if bias is not None:
        out_data = out_data + bias.data
    out = Tensor(out_data)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _bw(g):
        if x.requires_grad:
            _accum(x, _conv_grad_input(g, weight.data, x.shape, stride, dilation, padding))
        if weight.requires_grad:
            _accum(weight, _conv_grad_weight(x.data, g, kernel, stride, dilation, padding))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(0, 2, 3), dtype=np.float64).reshape(1, c_out, 1, 1))

    return _record(out, parents, _bw)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, eps: float = 1e-5,
               momentum: float = 0.1) -> Tensor:
    """Per-channel batch normalization.

    Training mode normalizes by biased batch statistics and folds them into the
    running buffers (new = (1-momentum)*old + momentum*batch, unbiased variance);
    eval mode normalizes by the running buffers. Statistics accumulate in float64.
    """
    c = x.shape[1]
    if gamma.shape != (1, c, 1, 1) or beta.shape != (1, c, 1, 1):
        raise DimensionError(f"gamma/beta must be (1,{c},1,1)")
    xd = x.data
    if training:
        count = xd.shape[0] * xd.shape[2] * xd.shape[3]
        mu64 = xd.mean(axis=(0, 2, 3), dtype=np.float64)
        var64 = xd.var(axis=(0, 2, 3), dtype=np.float64)
        if running_mean is not None:
            unbiased = var64 * count / (count - 1) if count > 1 else var64
            running_mean[:] = ((1.0 - momentum) * running_mean.astype(np.float64)
                               + momentum * mu64).astype(running_mean.dtype)
            running_var[:] = ((1.0 - momentum) * running_var.astype(np.float64)
                              + momentum * unbiased).astype(running_var.dtype)
    else:
        count = 0
        mu64 = running_mean.astype(np.float64)
        var64 = running_var.astype(np.float64)
    inv_std = (1.0 / np.sqrt(var64 + eps)).astype(xd.dtype)
    mu = mu64.astype(xd.dtype)
    x_hat = (xd - mu[None, :, None, None]) * inv_std[None, :, None, None]
    out = Tensor(gamma.data * x_hat + beta.data)

    def _bw(g):
        if beta.requires_grad:
            _accum(beta, g.sum(axis=(0, 2, 3), dtype=np.float64).reshape(1, c, 1, 1))
        if gamma.requires_grad:
            _accum(gamma, (g * x_hat).sum(axis=(0, 2, 3), dtype=np.float64).reshape(1, c, 1, 1))
        if x.requires_grad:
            gxk = gamma.data * inv_std[None, :, None, None]
            if training:
                mean_g = g.mean(axis=(0, 2, 3), dtype=np.float64, keepdims=True).astype(g.dtype)
                mean_gx = (g * x_hat).mean(axis=(0, 2, 3), dtype=np.float64,
                                           keepdims=True).astype(g.dtype)
                _accum(x, gxk * (g - mean_g - x_hat * mean_gx))
            else:
                _accum(x, gxk * g)

    return _record(out, (x, gamma, beta), _bw)


def prelu(x: Tensor, alpha: Tensor) -> Tensor:
    """Per-channel PReLU: x for x > 0, alpha_c * x otherwise."""
    c = x.shape[1]
    if alpha.shape != (1, c, 1, 1):
        raise DimensionError(f"alpha must be (1,{c},1,1), got {alpha.shape}")
    pos = x.data > 0
    out = Tensor(np.where(pos, x.data, alpha.data * x.data))

    def _bw(g):
        if x.requires_grad:
            _accum(x, np.where(pos, g, alpha.data * g))
        if alpha.requires_grad:
            contrib = np.where(pos, 0.0, g * x.data)
            _accum(alpha, contrib.sum(axis=(0, 2, 3), dtype=np.float64).reshape(1, c, 1, 1))

    return _record(out, (x, alpha), _bw)


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    out = Tensor(np.where(pos, x.data, 0.0).astype(x.dtype))

    def _bw(g):
        _accum(x, np.where(pos, g, 0.0))

    return _record(out, (x,), _bw)


def sigmoid(x: Tensor) -> Tensor:
    """Numerically stable logistic, clamped to the open interval (0,1) at the
    storage dtype's resolution so downstream gates can never saturate to exact 0/1."""
    xd = x.data
    t = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + t), t / (1.0 + t))
    fi = np.finfo(xd.dtype)
    y = np.clip(y, fi.tiny, 1.0 - fi.epsneg).astype(xd.dtype)
    out = Tensor(y)

    def _bw(g):
        _accum(x, y * (1.0 - y) * g)

    return _record(out, (x,), _bw)


def global_avg_pool(x: Tensor) -> Tensor:
    h, w = x.shape[2], x.shape[3]
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64).astype(x.dtype))

    def _bw(g):
        _accum(x, np.broadcast_to(g / (h * w), x.shape))

    return _record(out, (x,), _bw)


def fully_connected(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """Dense layer on pooled features: x is (N, C_in, 1, 1), weight (C_out, C_in, 1, 1)."""
    n, c_in = x.shape[0], x.shape[1]
    if x.shape[2] != 1 or x.shape[3] != 1:
        raise DimensionError(f"fully_connected input must be (N,C,1,1), got {x.shape}")
    c_out, c_in_w = weight.shape[0], weight.shape[1]
    if c_in_w != c_in or weight.shape[2] != 1 or weight.shape[3] != 1:
        raise DimensionError(f"weight must be ({c_out},{c_in},1,1), got {weight.shape}")
    x2 = x.data.reshape(n, c_in)
    w2 = weight.data.reshape(c_out, c_in)
    y = x2 @ w2.T
    if bias is not None:
        if bias.shape != (1, c_out, 1, 1):
            raise DimensionError(f"bias must be (1,{c_out},1,1), got {bias.shape}")
        y = y + bias.data.reshape(1, c_out)
    out = Tensor(y.reshape(n, c_out, 1, 1))

    def _bw(g):
        g2 = g.reshape(n, c_out)
        if x.requires_grad:
            _accum(x, (g2 @ w2).reshape(n, c_in, 1, 1))
        if weight.requires_grad:
            _accum(weight, (g2.T @ x2).reshape(c_out, c_in, 1, 1))
        if bias is not None and bias.requires_grad:
            _accum(bias, g2.sum(axis=0, dtype=np.float64).reshape(1, c_out, 1, 1))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, parents, _bw)


def _check_broadcast(a: Tensor, b: Tensor):
    for ax in range(4):
        if a.shape[ax] != b.shape[ax] and a.shape[ax] != 1 and b.shape[ax] != 1:
            raise DimensionError(
                f"shapes {a.shape} and {b.shape} are not broadcast-compatible on axis {ax}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out = Tensor(a.data + b.data)

    def _bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.shape))

    return _record(out, (a, b), _bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out = Tensor(a.data - b.data)

    def _bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accum(b, -_unbroadcast(g, b.shape))

    return _record(out, (a, b), _bw)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b)
    out = Tensor(a.data * b.data)

    def _bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _record(out, (a, b), _bw)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(x.data * np.asarray(c, dtype=x.dtype))

    def _bw(g):
        _accum(x, g * c)

    return _record(out, (x,), _bw)


def to_float64(x: Tensor) -> Tensor:
    """Differentiable widening cast; the gradient casts back on accumulation."""
    out = Tensor(x.data.astype(np.float64))

    def _bw(g):
        _accum(x, g)

    return _record(out, (x,), _bw)


def concat_channels(tensors) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise UsageError("concat_channels needs at least one tensor")
    ref = tensors[0]
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (ref.shape[0], ref.shape[2], ref.shape[3]):
            raise DimensionError(
                f"concat_channels needs matching N/H/W, got {ref.shape} vs {t.shape}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1))
    splits = np.cumsum([t.shape[1] for t in tensors])[:-1]

    def _bw(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=1)):
            if t.requires_grad:
                _accum(t, piece)

    return _record(out, tuple(tensors), _bw)


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, accumulated and returned in float64 (scalar tensor)."""
    out = Tensor(np.full((1, 1, 1, 1), x.data.sum(dtype=np.float64), dtype=np.float64))

    def _bw(g):
        _accum(x, np.broadcast_to(g.astype(x.dtype), x.shape))

    return _record(out, (x,), _bw)
