"""Tape-based reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray (float32 for training, float64 for gradient
checks).  Every op that touches a gradient-requiring input records a
backward closure; ``Tensor.backward()`` walks the recorded graph in
reverse topological order.  Data arrays are treated as immutable once
used in a forward pass; only optimizer steps mutate them, between
passes.
"""

import contextlib

import numpy as np

from . import backend
from .errors import ConfigurationError, DimensionError

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _recording():
    return _GRAD_ENABLED[-1]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(
                    f"backward() without a seed gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        # iterative post-order DFS; training graphs are too deep to recurse
        topo = []
        state = {}
        stack = [self]
        while stack:
            node = stack.pop()
            mark = state.get(id(node), 0)
            if mark == 0:
                state[id(node)] = 1
                stack.append(node)
                for p in node._parents:
                    if state.get(id(p), 0) == 0:
                        stack.append(p)
            elif mark == 1:
                state[id(node)] = 2
                topo.append(node)
        _accumulate(self, grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __neg__(self):
        return scale(self, -1.0)

    def __add__(self, other):
        return add(self, _coerce(other, self))

    def __radd__(self, other):
        return add(_coerce(other, self), self)

    def __sub__(self, other):
        return add(self, scale(_coerce(other, self), -1.0))

    def __rsub__(self, other):
        return add(_coerce(other, self), scale(self, -1.0))

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    def __rmul__(self, other):
        return mul(_coerce(other, self), self)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, dtype=None):
    """Wrap array-like data as a leaf Tensor (default float32)."""
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return Tensor(arr, requires_grad=requires_grad)


def _coerce(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _node(data, parents, backward_fn):
    track = _recording() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    if track:
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward_fn
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    # reduce a broadcasted gradient back to `shape`
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    try:
        data = a.data + b.data
    except ValueError:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(data, (a, b), bw)


def mul(a, b):
    try:
        data = a.data * b.data
    except ValueError:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def bw(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), bw)


def scale(a, s):
    s = float(s)

    def bw(g):
        _accumulate(a, g * s)

    return _node(a.data * np.asarray(s, dtype=a.dtype), (a,), bw)


def relu(a):
    mask = a.data > 0

    def bw(g):
        _accumulate(a, g * mask)

    return _node(np.where(mask, a.data, 0), (a,), bw)


def tanh(a):
    y = np.tanh(a.data)

    def bw(g):
        _accumulate(a, g * (1.0 - y * y))

    return _node(y, (a,), bw)


def elementwise(x, kind, other=None, factor=None):
    """Dispatch the pointwise ops by name.

    Binary kinds (add, mul) require exactly equal shapes here; the
    broadcasting variants are the bare functions.
    """
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "scale":
        if factor is None:
            raise ConfigurationError("elementwise scale needs a factor")
        return scale(x, factor)
    if kind in ("add", "mul"):
        if other is None:
            raise ConfigurationError(f"elementwise {kind} needs a second operand")
        if x.shape != other.shape:
            raise DimensionError(
                f"elementwise {kind}: shapes {x.shape} and {other.shape} differ"
            )
        return add(x, other) if kind == "add" else mul(x, other)
    raise ConfigurationError(f"unknown elementwise kind: {kind!r}")


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(data, (a, b), bw)


def softmax_axis(x, axis):
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax axis {axis} out of bounds for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    y = ez / ez.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(x, y * (g - inner))

    return _node(y, (x,), bw)


def sum_(x, axis=None, keepdims=False):
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accumulate(x, np.broadcast_to(g, x.shape).astype(x.dtype, copy=False))
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            shape = list(x.shape)
            for ax in axes:
                shape[ax] = 1
            g = g.reshape(shape)
        _accumulate(x, np.broadcast_to(g, x.shape).astype(x.dtype, copy=False))

    return _node(np.asarray(data), (x,), bw)


def mean_(x, axis=None, keepdims=False):
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = 1
        for ax in axes:
            n *= x.shape[ax]
    return scale(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


def rsqrt(x):
    y = 1.0 / np.sqrt(x.data)

    def bw(g):
        _accumulate(x, -0.5 * g * y * y * y)

    return _node(y, (x,), bw)


def reshape(x, shape):
    data = x.data.reshape(shape)

    def bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _node(data, (x,), bw)


def transpose(x, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _accumulate(x, g.transpose(inv))

    return _node(x.data.transpose(axes), (x,), bw)


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bw(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        _accumulate(x, full)

    return _node(np.ascontiguousarray(x.data[sl]), (x,), bw)


def concat(parts, axis):
    parts = list(parts)
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]

    def bw(g):
        offset = 0
        for p, s in zip(parts, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + s)
            _accumulate(p, g[tuple(sl)])
            offset += s

    return _node(data, tuple(parts), bw)


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def _triple(v):
    return (v, v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, k, stride=1, pad=0):
    """Batched 2-D cross-correlation with zero padding."""
    if x.ndim != 4 or k.ndim != 4:
        raise DimensionError(f"conv2d needs 4-D x and k, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise DimensionError(
            f"conv2d: input channels {x.shape[1]} != kernel channels {k.shape[1]}"
        )
    stride = _pair(stride)
    pad = _pair(pad)
    _, _, h, w = x.shape
    _, _, kh, kw = k.shape
    for dim, kk, s, p in (("H", kh, stride[0], pad[0]), ("W", kw, stride[1], pad[1])):
        span = (h if dim == "H" else w) + 2 * p - kk
        if span < 0 or span % s != 0:
            raise ConfigurationError(
                f"conv2d output size along {dim} is not integral "
                f"(size {(h if dim == 'H' else w)}, kernel {kk}, stride {s}, pad {p})"
            )
    data = backend.conv2d_forward(x.data, k.data, stride, pad)

    def bw(g):
        gx, gk = backend.conv2d_backward(
            x.data, k.data, stride, pad, g,
            need_gx=x.requires_grad, need_gk=k.requires_grad,
        )
        if gx is not None:
            _accumulate(x, gx)
        if gk is not None:
            _accumulate(k, gk)

    return _node(data, (x, k), bw)


def conv3d(x, k, stride=(1, 1, 1), pad=(0, 0, 0)):
    """Batched 3-D cross-correlation with zero padding."""
    if x.ndim != 5 or k.ndim != 5:
        raise DimensionError(f"conv3d needs 5-D x and k, got {x.shape} and {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise DimensionError(
            f"conv3d: input channels {x.shape[1]} != kernel channels {k.shape[1]}"
        )
    stride = _triple(stride)
    pad = _triple(pad)
    for name, size, kk, s, p in zip(
        "DHW", x.shape[2:], k.shape[2:], stride, pad
    ):
        span = size + 2 * p - kk
        if span < 0 or span % s != 0:
            raise ConfigurationError(
                f"conv3d output size along {name} is not integral "
                f"(size {size}, kernel {kk}, stride {s}, pad {p})"
            )
    data = backend.conv3d_forward(x.data, k.data, stride, pad)

    def bw(g):
        gx, gk = backend.conv3d_backward(
            x.data, k.data, stride, pad, g,
            need_gx=x.requires_grad, need_gk=k.requires_grad,
        )
        if gx is not None:
            _accumulate(x, gx)
        if gk is not None:
            _accumulate(k, gk)

    return _node(data, (x, k), bw)


class BatchNormState:
    """Running statistics for one batch_norm site."""

    def __init__(self, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)


def batch_norm(x, gamma, beta, state, mode="train"):
    """Normalize per channel (axis 1) over batch and spatial axes.

    Built from primitive tape ops, so the backward pass differentiates
    through the batch statistics.  Running stats are updated in train
    mode with ``momentum·old + (1−momentum)·batch`` and used verbatim in
    eval mode.
    """
    if x.ndim < 2:
        raise DimensionError(f"batch_norm needs a channel axis, got shape {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"batch_norm: gamma/beta shaped {gamma.shape}/{beta.shape}, expected ({c},)"
        )
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"batch_norm mode must be train or eval, got {mode!r}")
    bshape = (1, c) + (1,) * (x.ndim - 2)
    axes = (0,) + tuple(range(2, x.ndim))
    if mode == "train":
        if x.shape[0] < 2:
            raise ConfigurationError("batch_norm in train mode needs batch size >= 2")
        mu = mean_(x, axis=axes, keepdims=True)
        xc = add(x, scale(mu, -1.0))
        var = mean_(mul(xc, xc), axis=axes, keepdims=True)
        inv = rsqrt(add(var, Tensor(np.asarray(state.eps, dtype=x.dtype))))
        xhat = mul(xc, inv)
        m = state.momentum
        state.running_mean = (
            m * state.running_mean + (1.0 - m) * mu.data.reshape(c)
        ).astype(state.running_mean.dtype)
        state.running_var = (
            m * state.running_var + (1.0 - m) * var.data.reshape(c)
        ).astype(state.running_var.dtype)
    else:
        rm = Tensor(state.running_mean.reshape(bshape).astype(x.dtype))
        inv_np = 1.0 / np.sqrt(state.running_var + state.eps)
        inv = Tensor(inv_np.reshape(bshape).astype(x.dtype))
        xhat = mul(add(x, scale(rm, -1.0)), inv)
    return add(mul(xhat, reshape(gamma, bshape)), reshape(beta, bshape))
