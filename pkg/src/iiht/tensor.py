"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation returns a new :class:`Tensor`.  When gradient recording is
enabled and any input requires a gradient, the result remembers its inputs
and a closure mapping the output gradient to input gradients.  Calling
:func:`backward` on a scalar walks that graph once in reverse topological
order.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericError

_state = threading.local()


def is_grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (thread-local)."""
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextlib.contextmanager
def kink_monitor():
    """Record how close any relu/clamp/max input comes to its non-differentiable point.

    Yields a one-element list holding the smallest distance seen so far.
    """
    prev = getattr(_state, "kink", None)
    box = [np.inf]
    _state.kink = box
    try:
        yield box
    finally:
        _state.kink = prev


def _note_kink(distance):
    box = getattr(_state, "kink", None)
    if box is not None and distance.size:
        box[0] = min(box[0], float(distance.min()))


def _top_gap(values, axis):
    """Nonzero gaps between the largest and second largest entry along ``axis``.

    Exact ties (dead relu units, identical views) move together under any
    perturbation, so only near-ties are reported.
    """
    if values.shape[axis] < 2:
        return np.full(1, np.inf)
    part = -np.partition(-values, 1, axis=axis)
    gap = np.take(part, 0, axis=axis) - np.take(part, 1, axis=axis)
    return gap[gap > 0]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- construction helpers -------------------------------------------

    @classmethod
    def _result(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.op = op
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self.op!r})"

    def __len__(self):
        return self.data.shape[0]

    # -- operators ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
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


def _broadcast_shape(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._result(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor._result(a.data / b.data, (a, b), bw, "div")


def broadcast_to(a, shape):
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"cannot broadcast shape {a.shape} to {tuple(shape)}") from None
    return Tensor._result(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def maximum(a, value):
    """Elementwise max against a constant; gradient flows where ``a`` wins."""
    a = as_tensor(a)
    keep = a.data >= value
    _note_kink(np.abs(a.data - value))
    return Tensor._result(np.where(keep, a.data, value), (a,), lambda g: (g * keep,), "clamp_min")


def max_reduce(a, axis=0):
    """Max along ``axis``; ties send the gradient to the first maximum."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    _note_kink(_top_gap(a.data, axis))
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def bw(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (ga,)

    return Tensor._result(out, (a,), bw, "max")


# -- linear algebra -----------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}") from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return Tensor._result(out, (a, b), bw, "matmul")


# -- reductions and shape ops -------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._result(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return Tensor._result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return Tensor._result(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, index):
    a = as_tensor(a)
    out = a.data[index]

    basic = _is_basic_index(index)

    def bw(g):
        ga = np.zeros_like(a.data)
        if basic:
            ga[index] = g
        else:
            np.add.at(ga, index, g)
        return (ga,)

    return Tensor._result(np.array(out), (a,), bw, "slice")


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, np.integer)) or p is None or p is Ellipsis for p in parts)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"cannot concatenate shapes {shapes} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._result(out, tensors, bw, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis)


def embedding(table, index):
    """Rows of ``table`` selected by the integer array ``index``."""
    table = as_tensor(table)
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ContractError(f"embedding index out of range for table with {table.shape[0]} rows")
    out = table.data[index]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, index, g)
        return (gt,)

    return Tensor._result(out, (table,), bw, "embedding")


# -- elementwise unary --------------------------------------------------


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    _note_kink(np.abs(a.data))
    return Tensor._result(a.data * pos, (a,), lambda g: (g * pos,), "relu")


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    return Tensor._result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(a):
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return Tensor._result(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    return Tensor._result(y, (a,), lambda g: (g * y,), "exp")


def log(a):
    a = as_tensor(a)
    return Tensor._result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def softmax(a, axis=-1):
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax input contains non-finite values")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._result(y, (a,), bw, "softmax")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("log_softmax input contains non-finite values")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return Tensor._result(y, (a,), bw, "log_softmax")


def layer_norm(a, gamma=None, beta=None, eps=1e-5):
    """Normalise over the last axis, then apply the optional affine map."""
    a = as_tensor(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = a.shape[-1]

    def bw(g):
        gx = (inv / n) * (n * g - g.sum(axis=-1, keepdims=True)
                          - xhat * (g * xhat).sum(axis=-1, keepdims=True))
        return (gx,)

    out = Tensor._result(xhat, (a,), bw, "layer_norm")
    if gamma is not None:
        out = mul(out, gamma)
    if beta is not None:
        out = add(out, beta)
    return out


def dropout(a, rate, train, rng=None):
    a = as_tensor(a)
    if not train or rate <= 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return Tensor._result(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def masked_fill(a, mask, value):
    """Replace entries where ``mask`` is true by the constant ``value``."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    try:
        out = np.where(mask, value, a.data)
    except ValueError:
        raise DimensionError(f"mask shape {mask.shape} incompatible with {a.shape}") from None
    if out.shape != a.shape:
        raise DimensionError(f"mask shape {mask.shape} incompatible with {a.shape}")
    keep = ~mask
    return Tensor._result(out, (a,), lambda g: (_unbroadcast(g * keep, a.shape),), "masked_fill")


# -- image ops ----------------------------------------------------------


def conv2d(x, w, b=None, pad=1):
    """Stride-1 2-D convolution, NCHW input and OCkk weights."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape}, weight {w.shape}")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = np.asarray(kernels.conv2d_forward(xd, wd, pad))

    def bw(g):
        gx, gw = kernels.conv2d_backward(xd, wd, np.ascontiguousarray(g), pad)
        return np.asarray(gx), np.asarray(gw)

    y = Tensor._result(out, (x, w), bw, "conv2d")
    if b is not None:
        y = add(y, reshape(b, (1, -1, 1, 1)))
    return y


def max_pool2d(x, k=2):
    """Non-overlapping k×k max pooling; trailing rows/cols that do not fill a window are dropped."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho == 0 or wo == 0:
        raise DimensionError(f"max_pool2d window {k} larger than input {x.shape}")
    xc = x.data[:, :, :ho * k, :wo * k]
    win = xc.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, k * k)
    idx = win.argmax(axis=-1)
    _note_kink(_top_gap(win, -1))
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gw = gw.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * k, wo * k)
        gx = np.zeros_like(x.data)
        gx[:, :, :ho * k, :wo * k] = gw
        return (gx,)

    return Tensor._result(out, (x,), bw, "max_pool2d")


# -- graph traversal ----------------------------------------------------


def graph(loss):
    """Nodes reachable from ``loss`` that require grad, inputs before outputs."""
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every grad-requiring tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate nodes receive the
    gradient from this call only.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = graph(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
