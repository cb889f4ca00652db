"""Minimal reverse-mode automatic differentiation over numpy arrays.

Ops build the graph eagerly; ``backward`` walks it once in reverse
topological order.  Tensors wrapping constants (inputs, masks, dropout
masks) carry no graph, so evaluation-mode forwards allocate nothing beyond
the arrays themselves.  Broadcasting follows numpy; gradients of broadcast
operands are summed back to the operand shape.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_bwd", "requires_grad")

    def __init__(self, data, _parents=(), _bwd=None, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self._parents = _parents
        self._bwd = _bwd
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def backward(self, seed=None):
        """Accumulate gradients into every reachable ``requires_grad`` tensor."""
        order = _toposort(self)
        self.grad = np.ones_like(self.data) if seed is None else np.asarray(seed)
        for node in order:
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)


def _toposort(root: Tensor) -> list:
    """Nodes in gradient-propagation order (root first), graph nodes only."""
    out = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            out.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    out.reverse()
    return out


def constant(data) -> Tensor:
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _make(data, parents, bwd) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, _parents=tuple(parents), _bwd=bwd, requires_grad=True)
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g)  # own the buffer; later contributions add in place
    else:
        t.grad += g


def _ensure(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape of a broadcast operand."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------------------
# Arithmetic
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out_data = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), bwd)


def neg(a) -> Tensor:
    a = _ensure(a)
    return _make(-a.data, (a,), lambda g: _accum(a, -g))


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and not isinstance(a, (int, float)):
        return _scalar_mul(_ensure(a), float(b))
    if isinstance(a, (int, float)):
        return _scalar_mul(_ensure(b), float(a))
    a, b = _ensure(a), _ensure(b)
    out_data = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), bwd)


def _scalar_mul(a: Tensor, s: float) -> Tensor:
    return _make(a.data * s, (a,), lambda g: _accum(a, g * s))


def matmul(a, b) -> Tensor:
    a, b = _ensure(a), _ensure(b)
    out_data = a.data @ b.data

    def bwd(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _make(out_data, (a, b), bwd)


# --------------------------------------------------------------------------
# Shape manipulation
# --------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _ensure(a)
    in_shape = a.data.shape
    return _make(
        a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(in_shape))
    )


def swapaxes(a, ax1, ax2) -> Tensor:
    a = _ensure(a)
    return _make(
        np.swapaxes(a.data, ax1, ax2),
        (a,),
        lambda g: _accum(a, np.swapaxes(g, ax1, ax2)),
    )


def getitem(a, idx) -> Tensor:
    """Basic (non-overlapping) slicing/indexing."""
    a = _ensure(a)

    def bwd(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        _accum(a, buf)

    return _make(a.data[idx], (a,), bwd)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_ensure(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)

    def bwd(g):
        start = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            _accum(t, g[tuple(sl)])
            start += size

    return _make(out_data, tensors, bwd)


# --------------------------------------------------------------------------
# Reductions
# --------------------------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _ensure(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(gg, a.data.shape))

    return _make(out_data, (a,), bwd)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = _ensure(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return _scalar_mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# --------------------------------------------------------------------------
# Nonlinearities
# --------------------------------------------------------------------------


def tanh(a) -> Tensor:
    a = _ensure(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: _accum(a, g * (1.0 - y * y)))


def sigmoid(a) -> Tensor:
    a = _ensure(a)
    y = np.empty_like(a.data)
    pos = a.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    e = np.exp(a.data[~pos])
    y[~pos] = e / (1.0 + e)
    return _make(y, (a,), lambda g: _accum(a, g * y * (1.0 - y)))


def relu(a) -> Tensor:
    a = _ensure(a)
    y = np.maximum(a.data, 0.0)
    return _make(y, (a,), lambda g: _accum(a, g * (a.data > 0)))


def swish(a) -> Tensor:
    a = _ensure(a)
    return mul(a, sigmoid(a))


def exp(a) -> Tensor:
    a = _ensure(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: _accum(a, g * y))


def log(a) -> Tensor:
    a = _ensure(a)
    return _make(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


# --------------------------------------------------------------------------
# Fused layers
# --------------------------------------------------------------------------


def softmax(a, axis=-1) -> Tensor:
    a = _ensure(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), bwd)


def log_softmax(a, axis=-1) -> Tensor:
    a = _ensure(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def bwd(g):
        _accum(a, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _make(y, (a,), bwd)


def layer_norm(x, gain, bias, eps=1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = _ensure(x), _ensure(gain), _ensure(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gain.data + bias.data
    reduce_axes = tuple(range(x.data.ndim - 1))

    def bwd(g):
        _accum(gain, (g * xhat).sum(axis=reduce_axes))
        _accum(bias, g.sum(axis=reduce_axes))
        if x.requires_grad:
            dxhat = g * gain.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accum(x, dx)

    return _make(out_data, (x, gain, bias), bwd)


def depthwise_conv1d(x, w, b) -> Tensor:
    """Per-channel 1-D convolution with same padding.

    x: (batch, time, channels); w: (kernel, channels); b: (channels,).
    out[., t, c] = b[c] + sum_k w[k, c] * xpad[., t + k, c]
    """
    x, w, b = _ensure(x), _ensure(w), _ensure(b)
    k = w.data.shape[0]
    pad = k // 2
    t_len = x.data.shape[1]
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    out_data = np.broadcast_to(b.data, x.data.shape).copy()
    for i in range(k):
        out_data += w.data[i] * xp[:, i : i + t_len, :]

    def bwd(g):
        _accum(b, g.sum(axis=(0, 1)))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for i in range(k):
                gw[i] = (xp[:, i : i + t_len, :] * g).sum(axis=(0, 1))
            _accum(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(k):
                gxp[:, i : i + t_len, :] += w.data[i] * g
            _accum(x, gxp[:, pad : pad + t_len, :])

    return _make(out_data, (x, w, b), bwd)


def gather_rows(a, idx) -> Tensor:
    """out[i] = a[i, idx[i]] for a 2-D tensor and integer index vector."""
    a = _ensure(a)
    idx = np.asarray(idx)
    rows = np.arange(a.data.shape[0])

    def bwd(g):
        buf = np.zeros_like(a.data)
        buf[rows, idx] = g
        _accum(a, buf)

    return _make(a.data[rows, idx], (a,), bwd)
