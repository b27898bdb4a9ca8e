"""Dense-tensor reverse-mode automatic differentiation engine.

Every value flowing through the models is a :class:`TensorNode` wrapping a
numpy array. Operations build a DAG; ``backward`` on a scalar node walks it
in reverse topological order and accumulates gradients additively into every
node that requires them.

float32 is the working precision; constructing tensors from float64 arrays
keeps float64, which the gradient-check tests rely on.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class _GradMode(threading.local):
    # per-thread so frozen-weight inference may run beside the training loop
    enabled = True


_GRAD_MODE = _GradMode()


@contextmanager
def no_grad():
    """Disable graph construction inside the block (inference / regeneration)."""
    prev = _GRAD_MODE.enabled
    _GRAD_MODE.enabled = False
    try:
        yield
    finally:
        _GRAD_MODE.enabled = prev


@contextmanager
def frozen(*tensors):
    """Temporarily clear requires_grad on the given tensors.

    The graph still routes gradients *through* ops that consume them, but no
    gradient is computed or deposited for the tensors themselves; keep the
    context open across the backward call.
    """
    flags = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, f in zip(tensors, flags):
            t.requires_grad = f


class TensorNode:
    """A dense N-dimensional value with a gradient slot.

    ``grad`` stays ``None`` until a backward pass deposits something; repeated
    backward passes without resetting keep adding (fan-out and across passes).
    """

    __slots__ = ("values", "grad", "requires_grad", "_inputs", "_backward_fn")

    def __init__(self, values, requires_grad=False, dtype=None):
        arr = np.asarray(values)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.values = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._inputs = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def dtype(self):
        return self.values.dtype

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values.reshape(-1)[0]) if self.values.size == 1 else float(self.values)

    def detach(self):
        """A new leaf sharing this node's values, cut off from the graph."""
        return TensorNode(self.values, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode sweep from a scalar root.

        Each call accumulates one full pass of gradients into every
        ``requires_grad`` ancestor, so calling twice doubles them.
        """
        if self.values.size != 1:
            raise ValueError(
                f"backward() needs a scalar root, got shape {self.values.shape}")
        order = _toposort(self)
        flows = {id(self): np.ones_like(self.values)}
        for node in reversed(order):
            upstream = flows.pop(id(node), None)
            if upstream is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = upstream.copy()
                else:
                    node.grad += upstream
            if node._backward_fn is None:
                continue
            for inp, g in zip(node._inputs, node._backward_fn(upstream)):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in flows:
                    flows[key] += g
                else:
                    flows[key] = g

    def __repr__(self):
        return f"TensorNode(shape={self.values.shape}, dtype={self.values.dtype}, requires_grad={self.requires_grad})"

    # Convenience arithmetic; the named module functions are the real API.
    def __add__(self, other):
        return add(self, _as_node(other, self.dtype))

    def __radd__(self, other):
        return add(_as_node(other, self.dtype), self)

    def __sub__(self, other):
        return sub(self, _as_node(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_node(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_node(other, self.dtype))

    def __rmul__(self, other):
        return mul(_as_node(other, self.dtype), self)

    def __neg__(self):
        return neg(self)


def _as_node(x, dtype):
    if isinstance(x, TensorNode):
        return x
    return TensorNode(np.asarray(x, dtype=dtype))


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for inp in node._inputs:
            if id(inp) not in visited and inp.requires_grad:
                stack.append((inp, False))
    return order


def _make(values, inputs, backward_fn):
    req = _GRAD_MODE.enabled and any(t.requires_grad for t in inputs)
    out = TensorNode(values, requires_grad=req)
    if req:
        out._inputs = tuple(inputs)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    return _make(a.values + b.values, (a, b),
                 lambda u: (_unbroadcast(u, a.shape), _unbroadcast(u, b.shape)))


def sub(a, b):
    return _make(a.values - b.values, (a, b),
                 lambda u: (_unbroadcast(u, a.shape), _unbroadcast(-u, b.shape)))


def mul(a, b):
    return _make(a.values * b.values, (a, b),
                 lambda u: (_unbroadcast(u * b.values, a.shape),
                            _unbroadcast(u * a.values, b.shape)))


def neg(a):
    return _make(-a.values, (a,), lambda u: (-u,))


def scale(a, s):
    s = float(s)
    return _make(a.values * s, (a,), lambda u: (u * s,))


def elementwise_power(a, q):
    """Elementwise integer power ``a**q`` with q >= 1.

    q = 0 is rejected: the constant term of a polynomial transformation is
    the job of the bias that follows it.
    """
    if not isinstance(q, (int, np.integer)) or q < 1:
        raise ValueError(f"elementwise_power: exponent must be an integer >= 1, got {q!r}")
    if q == 1:
        return _make(a.values.copy(), (a,), lambda u: (u,))
    return _make(a.values ** q, (a,),
                 lambda u: (u * q * a.values ** (q - 1),))


def absolute(a):
    return _make(np.abs(a.values), (a,), lambda u: (u * np.sign(a.values),))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def tanh(a):
    t = np.tanh(a.values)
    return _make(t, (a,), lambda u: (u * (1.0 - t * t),))


def sigmoid(a):
    # exponent clamped for stability; value itself is exact within fp
    s = 1.0 / (1.0 + np.exp(-np.clip(a.values, -60.0, 60.0)))
    return _make(s, (a,), lambda u: (u * s * (1.0 - s),))


def relu(a):
    return leaky_relu(a, slope=0.0)


def leaky_relu(a, slope=0.2):
    pos = a.values > 0
    out = np.where(pos, a.values, slope * a.values)
    return _make(out, (a,),
                 lambda u: (u * np.where(pos, 1.0, slope).astype(a.dtype),))


def softmax(a, axis=-1):
    z = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(u):
        dot = (u * p).sum(axis=axis, keepdims=True)
        return (p * (u - dot),)

    return _make(p, (a,), backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a, shape):
    return _make(a.values.reshape(shape), (a,),
                 lambda u: (u.reshape(a.shape),))


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(a.values.transpose(axes), (a,),
                 lambda u: (u.transpose(inverse),))


def concat(tensors, axis=1):
    tensors = tuple(tensors)
    values = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(u):
        return tuple(np.split(u, splits, axis=axis))

    return _make(values, tensors, backward)


def narrow(a, axis, start, length):
    """Contiguous slice along one axis; the gradient scatters back in place."""
    if start < 0 or start + length > a.shape[axis]:
        raise ValueError(f"narrow: [{start}, {start + length}) outside axis of size {a.shape[axis]}")
    sl = [slice(None)] * a.values.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def backward(u):
        g = np.zeros_like(a.values)
        g[sl] = u
        return (g,)

    return _make(a.values[sl].copy(), (a,), backward)


def split(a, sizes, axis=0):
    """Split into consecutive chunks of the given sizes along an axis."""
    if sum(sizes) != a.shape[axis]:
        raise ValueError(f"split: sizes {sizes} do not cover axis of size {a.shape[axis]}")
    out = []
    start = 0
    for length in sizes:
        out.append(narrow(a, axis, start, length))
        start += length
    return tuple(out)


# ---------------------------------------------------------------------------
# reductions and dense algebra
# ---------------------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False):
    def backward(u):
        if axis is None:
            return (np.broadcast_to(u, a.shape).astype(a.dtype, copy=True),)
        g = u if keepdims else np.expand_dims(u, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return _make(a.values.sum(axis=axis, keepdims=keepdims), (a,), backward)


def reduce_mean(a, axis=None, keepdims=False):
    if axis is None:
        count = a.size
    else:
        ax = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[i] for i in ax]))

    def backward(u):
        if axis is None:
            g = np.broadcast_to(u, a.shape)
        else:
            g = np.broadcast_to(u if keepdims else np.expand_dims(u, axis), a.shape)
        return ((g / count).astype(a.dtype, copy=False).copy(),)

    return _make(a.values.mean(axis=axis, keepdims=keepdims), (a,), backward)


def matmul(a, b):
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    return _make(a.values @ b.values, (a, b),
                 lambda u: (u @ b.values.T, a.values.T @ u))


def dense(x, weight, bias=None):
    """Affine map ``x @ weight + bias`` for x of shape [N, C]."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def global_average_pool(a):
    """[N, C, H, W] -> [N, C], mean over the spatial extent."""
    if a.values.ndim != 4:
        raise ValueError(f"global_average_pool expects NCHW input, got shape {a.shape}")
    return reduce_mean(a, axis=(2, 3))


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def l1_mean(a, b):
    """Mean absolute deviation between two same-shaped tensors (scalar)."""
    if a.shape != b.shape:
        raise ValueError(f"l1_mean: shape mismatch {a.shape} vs {b.shape}")
    return reduce_mean(absolute(sub(a, b)))


def mse(a, b):
    """Mean squared deviation between two same-shaped tensors (scalar)."""
    if a.shape != b.shape:
        raise ValueError(f"mse: shape mismatch {a.shape} vs {b.shape}")
    d = sub(a, b)
    return reduce_mean(mul(d, d))


def cross_entropy(true_onehot, probs, eps=1e-7):
    """Categorical cross-entropy, summed over classes, averaged over rows.

    ``true_onehot`` rows must sum to one; predicted probabilities are floored
    at ``eps`` before the log.
    """
    c = true_onehot.values
    p = probs
    if c.shape != p.shape:
        raise ValueError(f"cross_entropy: shape mismatch {c.shape} vs {p.shape}")
    row_sums = c.sum(axis=-1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise ValueError(f"cross_entropy: one-hot rows must sum to 1, got sums {row_sums}")
    rows = c.size // c.shape[-1]
    floored = np.maximum(p.values, eps)

    def backward(u):
        g = np.zeros_like(p.values)
        unclamped = p.values > eps
        np.divide(-c, floored, out=g, where=unclamped)
        return (None, (u / rows) * g)

    value = -(c * np.log(floored)).sum() / rows
    return _make(np.asarray(value, dtype=p.dtype), (true_onehot, p), backward)


# ---------------------------------------------------------------------------
# convolution kernels (im2col / GEMM core shared by both directions)
# ---------------------------------------------------------------------------

def _pad2d(x, padding):
    if padding == 0:
        return x
    n, c, h, w = x.shape
    out = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
    out[:, :, padding:padding + h, padding:padding + w] = x
    return out


def _windows(x, kh, kw, stride):
    # [N, C, OH, OW, kh, kw] strided view over the padded input
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _raw_conv(x, w, stride, padding):
    """Cross-correlation of NCHW input with [C_out, C_in, kh, kw] weights."""
    n, ci, h, wid = x.shape
    co, ci_w, kh, kw = w.shape
    if ci != ci_w:
        raise ValueError(f"conv2d: input has {ci} channels but kernel expects {ci_w}")
    if h + 2 * padding < kh or wid + 2 * padding < kw:
        raise ValueError(
            f"conv2d: kernel {kh}x{kw} does not fit padded input {h + 2 * padding}x{wid + 2 * padding}")
    win = _windows(_pad2d(x, padding), kh, kw, stride)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def _raw_conv_grad_w(x, g, stride, padding, kh, kw):
    """Gradient of the conv weights: correlate input windows with the output grad."""
    win = _windows(_pad2d(x, padding), kh, kw, stride)
    dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
    return np.ascontiguousarray(dw)  # [C_out, C_in, kh, kw]


def _raw_conv_grad_x(g, w, stride, padding, out_hw):
    """Adjoint of :func:`_raw_conv`: scatter the output grad back to input shape.

    One GEMM turns the output grad into per-tap contributions (col form),
    which are then strided-added into the padded input buffer; rows the
    forward never touched keep zero gradient.
    """
    n, co, oh, ow = g.shape
    co_w, ci, kh, kw = w.shape
    if co != co_w:
        raise ValueError(f"conv adjoint: grad has {co} channels but kernel produces {co_w}")
    h, wid = out_hw
    hp, wp = h + 2 * padding, wid + 2 * padding
    g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, co)
    cols = (g2 @ w.reshape(co, ci * kh * kw)).reshape(n, oh, ow, ci, kh, kw)
    dxp = np.zeros((n, hp, wp, ci), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += cols[:, :, :, :, i, j]
    dx = dxp.transpose(0, 3, 1, 2)[:, :, padding:padding + h, padding:padding + wid]
    return np.ascontiguousarray(dx)


def conv2d(x, weights, bias=None, stride=1, padding=0):
    """2-D cross-correlation, differentiable in input, weights and bias.

    x: [N, C_in, H, W]; weights: [C_out, C_in, kh, kw]; bias: [C_out] or None.
    Output spatial size is (H + 2*padding - kh) // stride + 1.
    """
    if x.values.ndim != 4:
        raise ValueError(f"conv2d: input must be NCHW, got shape {x.shape}")
    if weights.values.ndim != 4:
        raise ValueError(f"conv2d: weights must be [C_out, C_in, kh, kw], got {weights.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    kh, kw = weights.shape[2], weights.shape[3]
    out = _raw_conv(x.values, weights.values, stride, padding)
    if bias is not None:
        if bias.shape != (weights.shape[0],):
            raise ValueError(f"conv2d: bias shape {bias.shape} does not match {weights.shape[0]} filters")
        out = out + bias.values.reshape(1, -1, 1, 1)

    in_hw = (x.shape[2], x.shape[3])

    def backward(u):
        # skipping grads for frozen inputs avoids the matching GEMM entirely
        dx = _raw_conv_grad_x(u, weights.values, stride, padding, in_hw) \
            if x.requires_grad else None
        dw = _raw_conv_grad_w(x.values, u, stride, padding, kh, kw) \
            if weights.requires_grad else None
        if bias is None:
            return (dx, dw)
        db = u.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return (dx, dw, db)

    inputs = (x, weights) if bias is None else (x, weights, bias)
    return _make(out, inputs, backward)


def transposed_conv2d(x, weights, bias=None, stride=1, padding=0, output_padding=0):
    """Adjoint of conv2d (fractionally strided convolution).

    x: [N, C_in, H, W]; weights: [C_in, C_out, kh, kw]; output spatial size is
    (H - 1) * stride - 2*padding + kh + output_padding.
    """
    if x.values.ndim != 4:
        raise ValueError(f"transposed_conv2d: input must be NCHW, got shape {x.shape}")
    if weights.values.ndim != 4:
        raise ValueError(
            f"transposed_conv2d: weights must be [C_in, C_out, kh, kw], got {weights.shape}")
    ci, co, kh, kw = weights.shape
    if x.shape[1] != ci:
        raise ValueError(
            f"transposed_conv2d: input has {x.shape[1]} channels but kernel expects {ci}")
    if not 0 <= output_padding < stride:
        raise ValueError(f"transposed_conv2d: output_padding must be in [0, stride), got {output_padding}")
    h2 = (x.shape[2] - 1) * stride - 2 * padding + kh + output_padding
    w2 = (x.shape[3] - 1) * stride - 2 * padding + kw + output_padding
    if h2 < 1 or w2 < 1:
        raise ValueError("transposed_conv2d: output size would be empty")
    out = _raw_conv_grad_x(x.values, weights.values, stride, padding, (h2, w2))
    if bias is not None:
        if bias.shape != (co,):
            raise ValueError(f"transposed_conv2d: bias shape {bias.shape} does not match {co} filters")
        out = out + bias.values.reshape(1, -1, 1, 1)

    def backward(u):
        dx = _raw_conv(u, weights.values, stride, padding) if x.requires_grad else None
        dw = _raw_conv_grad_w(u, x.values, stride, padding, kh, kw) \
            if weights.requires_grad else None
        if bias is None:
            return (dx, dw)
        db = u.sum(axis=(0, 2, 3)) if bias.requires_grad else None
        return (dx, dw, db)

    inputs = (x, weights) if bias is None else (x, weights, bias)
    return _make(out, inputs, backward)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def instance_norm(x, gain, shift, eps=1e-5):
    """Per-sample, per-channel standardization over the spatial extent,
    followed by a learnable affine map. gain/shift have shape [C]."""
    if x.values.ndim != 4:
        raise ValueError(f"instance_norm expects NCHW input, got shape {x.shape}")
    c = x.shape[1]
    if gain.shape != (c,) or shift.shape != (c,):
        raise ValueError(
            f"instance_norm: gain/shift must have shape ({c},), got {gain.shape} and {shift.shape}")
    mu = x.values.mean(axis=(2, 3), keepdims=True)
    var = x.values.var(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv
    g4 = gain.values.reshape(1, -1, 1, 1)
    out = xhat * g4 + shift.values.reshape(1, -1, 1, 1)

    def backward(u):
        dxhat = u * g4
        mean_dxhat = dxhat.mean(axis=(2, 3), keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=(2, 3), keepdims=True)
        dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
        dgain = (u * xhat).sum(axis=(0, 2, 3))
        dshift = u.sum(axis=(0, 2, 3))
        return (dx.astype(x.dtype, copy=False), dgain, dshift)

    return _make(out, (x, gain, shift), backward)
