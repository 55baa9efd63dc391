"""Dense float64 arrays with a define-by-run reverse-mode tape.

Every operation returns a new immutable :class:`Tensor`. Nodes are numbered
in creation order, which is also a valid topological order, so the backward
pass replays adjoints by walking reachable nodes in decreasing id.

Broadcasting is deliberately narrow: binary elementwise ops accept equal
shapes or a scalar operand. Anything else goes through an explicit op
(``linear`` for bias rows, ``expand`` for tiling, ``normalize_last``...).
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import special

_ids = itertools.count()


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._id = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        Tape.from_root(self).replay(grad)

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __radd__ = lambda self, other: add(other, self)  # noqa: E731
    __sub__ = lambda self, other: sub(self, other)  # noqa: E731
    __rsub__ = lambda self, other: sub(other, self)  # noqa: E731
    __mul__ = lambda self, other: mul(self, other)  # noqa: E731
    __rmul__ = lambda self, other: mul(other, self)  # noqa: E731
    __truediv__ = lambda self, other: div(self, other)  # noqa: E731
    __rtruediv__ = lambda self, other: div(other, self)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._id = next(_ids)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


class Tape:
    """Reachable sub-graph of a scalar root, kept in creation order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_root(cls, root):
        seen = {}
        stack = [root]
        while stack:
            node = stack.pop()
            if node._id in seen or not node.requires_grad:
                continue
            seen[node._id] = node
            stack.extend(node._parents)
        return cls(sorted(seen.values(), key=lambda t: t._id))

    def replay(self, seed=None):
        if not self.nodes:
            return
        root = self.nodes[-1]
        if seed is None:
            if root.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar root")
            seed = np.ones_like(root.data)
        grads = {root._id: np.asarray(seed, dtype=np.float64)}
        for node in reversed(self.nodes):
            g = grads.pop(node._id, None)
            if node._backward is None:
                if g is None:
                    g = np.zeros_like(node.data)
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent._id)
                grads[parent._id] = pg if prev is None else prev + pg


# ---------------------------------------------------------------- elementwise


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def _check_pair(a, b, op):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "add")
    sa, sb = a.shape, b.shape
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_pair(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)))


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, (a,), lambda g: (g * c,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive input")
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = as_tensor(a)
    out = special.expit(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a):
    a = as_tensor(a)
    ad = a.data
    return _node(np.logaddexp(0.0, ad), (a,), lambda g: (g * special.expit(ad),))


def lgamma(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("lgamma needs positive input")
    ad = a.data
    return _node(special.gammaln(ad), (a,), lambda g: (g * special.digamma(ad),))


def digamma(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("digamma needs positive input")
    ad = a.data
    return _node(special.digamma(ad), (a,), lambda g: (g * special.polygamma(1, ad),))


# ------------------------------------------------------------------ reductions


def sum(a):  # noqa: A001
    a = as_tensor(a)
    shape = a.shape
    return _node(np.asarray(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def mean(a):
    a = as_tensor(a)
    shape, n = a.shape, a.size
    return _node(np.asarray(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),))


def sum_axis(a, axis):
    a = as_tensor(a)
    shape = a.shape
    return _node(a.data.sum(axis=axis), (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean_axis(a, axis):
    a = as_tensor(a)
    shape = a.shape
    n = shape[axis]
    return _node(a.data.mean(axis=axis), (a,),
                 lambda g: (np.broadcast_to(np.expand_dims(g / n, axis), shape).copy(),))


def logsumexp(a):
    a = as_tensor(a)
    m = a.data.max()
    e = np.exp(a.data - m)
    s = e.sum()
    return _node(np.asarray(m + math.log(s)), (a,), lambda g: (float(g) * e / s,))


# ------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product over the last two axes; leading axes must agree."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b),
                 lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g))


def linear(x, w, b=None):
    """``x @ w + b`` with ``b`` added to every row (the one sanctioned row broadcast)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {w.shape}")
    xd, wd = x.data, w.data
    if b is None:
        return _node(xd @ wd, (x, w), lambda g: (g @ wd.T, _wgrad(xd, g)))
    b = as_tensor(b)
    if b.shape != (w.shape[1],):
        raise DimensionError(f"linear: bias {b.shape} does not fit weight {w.shape}")
    return _node(xd @ wd + b.data, (x, w, b),
                 lambda g: (g @ wd.T, _wgrad(xd, g), g.reshape(-1, g.shape[-1]).sum(axis=0)))


def _wgrad(xd, g):
    return xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])


# ------------------------------------------------------------------- shaping


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swapaxes(a, ax1, ax2):
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),))


def transpose(a):
    return swapaxes(a, -1, -2)


def expand(a, lead):
    """Tile ``a`` along new leading axes ``lead``; adjoint sums them back."""
    a = as_tensor(a)
    lead = tuple(lead)
    k = len(lead)
    out = np.broadcast_to(a.data, lead + a.shape).copy()
    return _node(out, (a,), lambda g: (g.sum(axis=tuple(range(k))),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _node(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), backward)


def stack(tensors):
    tensors = [as_tensor(t) for t in tensors]
    return _node(np.stack([t.data for t in tensors]), tuple(tensors),
                 lambda g: tuple(g[i] for i in range(len(tensors))))


def slice_last(a, start, stop):
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _node(a.data[..., start:stop].copy(), (a,), backward)


def take_rows(a, idx):
    """Gather along axis 0."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _node(a.data[idx], (a,), backward)


# ------------------------------------------------------------ row-wise maps


def softmax(a):
    """Softmax along the last axis, max-subtracted."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softmax: non-finite logits")
    e = np.exp(a.data - a.data.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (a,), backward)


softmax_rows = softmax


def log_softmax(a):
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("log_softmax: non-finite logits")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _node(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def normalize_last(a):
    """Divide each last-axis row by its sum."""
    a = as_tensor(a)
    s = a.data.sum(axis=-1, keepdims=True)
    out = a.data / s

    def backward(g):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) / s,)

    return _node(out, (a,), backward)


def layer_norm(a, gain=None, bias=None, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    a = as_tensor(a)
    if a.shape[-1] < 2:
        raise DimensionError("layer_norm needs rows of length >= 2")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    if gain is None:
        def backward(g):
            return (inv * (g - g.mean(axis=-1, keepdims=True)
                           - xhat * (g * xhat).mean(axis=-1, keepdims=True)),)
        return _node(xhat, (a,), backward)

    gain, bias = as_tensor(gain), as_tensor(bias)
    gd = gain.data

    def backward_affine(g):
        d = g * gd
        dx = inv * (d - d.mean(axis=-1, keepdims=True)
                    - xhat * (d * xhat).mean(axis=-1, keepdims=True))
        flat = g.reshape(-1, g.shape[-1])
        return dx, (flat * xhat.reshape(flat.shape)).sum(axis=0), flat.sum(axis=0)

    return _node(xhat * gd + bias.data, (a, gain, bias), backward_affine)


layer_norm_rows = layer_norm
