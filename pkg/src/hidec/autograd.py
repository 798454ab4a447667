"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable op records its parents and a backward function mapping
the output gradient to one gradient per parent. ``Tensor.backward`` walks
the recorded graph in reverse topological order. Gradients are kept on
leaves (parameters) and on tensors that asked for them via ``retain_grad``.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .exceptions import DoubleBackward, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_retain", "_consumed")

    __array_priority__ = 100  # keep ndarray <op> Tensor dispatching to Tensor

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = ""
        self._retain = False
        self._consumed = False

    # -- basics -----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def detach(self):
        return Tensor(self.data)

    def retain_grad(self):
        self._retain = True
        return self

    def zero_grad(self):
        self.grad = None

    # -- operators --------------------------------------------------------

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

    def __neg__(self):
        return scale(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

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
        return transpose(self, axes or None)

    # -- reverse pass -----------------------------------------------------

    def backward(self, grad=None):
        if self._consumed:
            raise DoubleBackward("graph already consumed by a previous backward()")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order = _topological(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if node._retain:
                node.grad = g.copy() if node.grad is None else node.grad + g
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        for node in order:
            node._consumed = bool(node._parents)
            node._parents = ()
            node._backward = None
        self._consumed = True


def _topological(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        if node._consumed and node is not root:
            raise DoubleBackward("graph reuses tensors freed by a previous backward()")
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        return Tensor(x)
    return Tensor(np.asarray(x, dtype=dtype))


def _binary_dtype(a, b):
    if isinstance(a, Tensor):
        return a.dtype
    if isinstance(b, Tensor):
        return b.dtype
    return None


def _result(data, parents, backward, op):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ------------------------------------------------------------

def add(a, b):
    dt = _binary_dtype(a, b)
    a, b = as_tensor(a, dt), as_tensor(b, dt)
    _check_broadcast(a, b, "add")
    return _result(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add",
    )


def sub(a, b):
    dt = _binary_dtype(a, b)
    a, b = as_tensor(a, dt), as_tensor(b, dt)
    _check_broadcast(a, b, "sub")
    return _result(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub",
    )


def mul(a, b):
    dt = _binary_dtype(a, b)
    a, b = as_tensor(a, dt), as_tensor(b, dt)
    _check_broadcast(a, b, "mul")
    return _result(
        a.data * b.data, (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
        "mul",
    )


def scale(a, c):
    a = as_tensor(a)
    c = a.dtype.type(c)
    return _result(a.data * c, (a,), lambda g: (g * c,), "scale")


def power(a, exponent):
    a = as_tensor(a)
    e = a.dtype.type(exponent)
    out = a.data ** e
    return _result(out, (a,), lambda g: (g * e * a.data ** (e - 1),), "power")


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a, lo, hi):
    out = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(out, (a,), lambda g: (g * inside,), "clip")


def sigmoid(a):
    x = a.data
    # split by sign to avoid overflow in exp
    ex = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + ex), ex / (1.0 + ex)).astype(x.dtype, copy=False)
    return _result(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def relu(a):
    pos = a.data > 0
    return _result(np.where(pos, a.data, 0).astype(a.dtype, copy=False), (a,), lambda g: (g * pos,), "relu")


# -- reductions and shape ---------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(out, (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} to {shape}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, tuple(axes))


def getitem(a, index):
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(out, (a,), backward, "getitem")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(out, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: {exc}") from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result(out, tuple(tensors), backward, "stack")


# -- contractions -----------------------------------------------------------

def matmul(a, b):
    dt = _binary_dtype(a, b)
    a, b = as_tensor(a, dt), as_tensor(b, dt)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from None

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def embedding(table, ids):
    """Row lookup ``table[ids]``; ``ids`` is an integer array of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding ids out of range [0, {table.shape[0]})")
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _result(out, (table,), backward, "embedding")


# -- attention helpers ------------------------------------------------------

def masked_softmax(scores, mask=None):
    """Softmax over the last axis after adding an additive mask.

    Rows whose every entry is masked (mask <= -1e8) come out as zeros.
    """
    s = scores.data
    if mask is not None:
        mask = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=s.dtype)
        try:
            s = s + mask
        except ValueError:
            raise ShapeError(f"mask {mask.shape} does not broadcast to scores {s.shape}") from None
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    if mask is not None:
        open_rows = (mask > -1e8).any(axis=-1, keepdims=True)
        if not open_rows.all():
            out = out * open_rows
    out = out.astype(scores.dtype, copy=False)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (scores,), backward, "masked_softmax")


def dropout(a, p, rng, training):
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / a.dtype.type(1 - p)
    return _result(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def layer_norm(x, gain, bias, eps=1e-5):
    mu = mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = mean(xc * xc, axis=-1, keepdims=True)
    return xc * power(var + eps, -0.5) * gain + bias
