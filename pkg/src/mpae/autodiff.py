"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every trainable computation in the package is expressed through the
primitives in this module, so the analytic gradients checked by the
finite-difference suite are exactly the vector-Jacobian products written
here.  All arithmetic is float64.  Graphs are built eagerly as closures on
the output tensors; no global tape.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

__all__ = [
    "Tensor", "make_node", "add", "sub", "mul", "div", "neg", "power",
    "matmul", "exp", "log", "sqrt", "tanh", "sigmoid", "absolute",
    "clamp_min", "tsum", "tmean", "amax", "softmax", "reshape", "transpose",
    "concatenate", "scatter", "getitem",
]


class Tensor:
    """An ndarray plus the closure needed to backpropagate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def backward(self, grad=None):
        """Accumulate dL/dx into .grad for every requires_grad tensor below."""
        if grad is None:
            if self.data.size != 1:
                raise ValidationError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        else:
            grad = np.asarray(grad, dtype=np.float64)

        # Depth-first postorder; reversed, it is a topological order with
        # every consumer visited before its inputs.
        order = []
        seen = set()
        stack = [(self, False)]
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        pending = {id(self): grad}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = pending.get(id(p))
                pending[id(p)] = pg if acc is None else acc + pg

    # operator sugar
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
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data, parents, vjp):
    """Create a graph node for a fused primitive.

    ``vjp(g)`` must return one gradient (or None) per parent.  Extension
    point for ops whose forward pass runs outside this module, for example
    scipy-backed correlations.
    """
    parents = tuple(parents)
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    """Sum g over the axes numpy broadcast to reach g.shape from shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                _unbroadcast(g * a.data, b.data.shape)))


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    return make_node(a.data / b.data, (a, b),
                     lambda g: (_unbroadcast(g / b.data, a.data.shape),
                                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)))


def neg(a):
    a = _as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,))


def power(a, exponent):
    """Elementwise a**c for a constant scalar exponent."""
    a = _as_tensor(a)
    c = float(exponent)
    return make_node(a.data ** c, (a,), lambda g: (g * c * a.data ** (c - 1.0),))


def matmul(a, b):
    """Matrix product; operands must be >= 2-D, batch dims broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValidationError("matmul operands must be at least 2-D")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)

    return make_node(a.data @ b.data, (a, b), vjp)


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)
    return make_node(out_data, (a,), lambda g: (g * out_data,))


def log(a):
    a = _as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)
    return make_node(out_data, (a,), lambda g: (g * 0.5 / out_data,))


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)
    return make_node(out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def sigmoid(a):
    a = _as_tensor(a)
    out_data = np.where(a.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    return make_node(out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


def absolute(a):
    """|a|, with subgradient 0 at exactly 0."""
    a = _as_tensor(a)
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp_min(a, lo):
    """max(a, lo) for a constant floor; gradient passes only where a > lo."""
    a = _as_tensor(a)
    lo = float(lo)
    return make_node(np.maximum(a.data, lo), (a,),
                     lambda g: (g * (a.data > lo).astype(np.float64),))


def _restore_reduced(g, in_shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, in_shape)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(ax % len(in_shape) for ax in axes)
        shape = tuple(1 if i in axes else n for i, n in enumerate(in_shape))
        g = g.reshape(shape)
    return np.broadcast_to(g, in_shape)


def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    return make_node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,),
                     lambda g: (_restore_reduced(g, a.data.shape, axis, keepdims).copy(),))


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return make_node(np.mean(a.data, axis=axis, keepdims=keepdims), (a,),
                     lambda g: (_restore_reduced(g, a.data.shape, axis, keepdims) / count,))


def amax(a, axis=None, keepdims=False):
    """Maximum over axes; ties share the incoming gradient equally."""
    a = _as_tensor(a)
    out_data = np.amax(a.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        full_max = np.amax(a.data, axis=axis, keepdims=True)
        mask = (a.data == full_max).astype(np.float64)
        counts = mask.sum(axis=axis, keepdims=True)
        g_full = _restore_reduced(g, a.data.shape, axis, keepdims)
        return (g_full * mask / counts,)

    return make_node(out_data, (a,), vjp)


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - np.amax(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        gy = g * y
        return (gy - y * gy.sum(axis=axis, keepdims=True),)

    return make_node(y, (a,), vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    return make_node(a.data.reshape(shape), (a,),
                     lambda g: (g.reshape(a.data.shape),))


def transpose(a, axes):
    a = _as_tensor(a)
    inverse = tuple(np.argsort(axes))
    return make_node(a.data.transpose(axes), (a,),
                     lambda g: (g.transpose(inverse),))


def concatenate(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, vjp)


def _contains_int_array(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    for p in parts:
        if isinstance(p, (list, np.ndarray)):
            arr = np.asarray(p)
            if arr.dtype != bool:
                return True
    return False


def getitem(a, idx):
    a = _as_tensor(a)

    def vjp(g):
        z = np.zeros_like(a.data)
        if _contains_int_array(idx):
            np.add.at(z, idx, g)
        else:
            z[idx] += g
        return (z,)

    return make_node(a.data[idx], (a,), vjp)


def scatter(shape, idx, values):
    """Zeros of ``shape`` with ``values`` written at ``idx``.

    Index positions must be unique; duplicates would make the forward
    assignment order-dependent and the gradient wrong.
    """
    values = _as_tensor(values)
    out_data = np.zeros(shape, dtype=np.float64)
    out_data[idx] = values.data
    return make_node(out_data, (values,), lambda g: (g[idx],))
