"""Reverse-mode autodiff over dense numpy tensors.

The operation vocabulary is fixed: exactly what the networks here need
(convolutions, elementwise maps, reductions, affine maps, the losses).
Graphs are built eagerly; ``Tensor.backward`` runs one reverse sweep over a
topological order. Everything is deterministic given input values and any
explicitly passed ``numpy.random.Generator``.
"""

import numpy as np

from . import convkernels as ck
from .errors import ShapeError

FLOAT_DTYPES = (np.float32, np.float64)


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in FLOAT_DTYPES:
        return arr.astype(np.float64)
    return arr


class Tensor:
    """A value in the computation graph.

    ``data`` is a row-major numpy array (float32 or float64). ``grad`` is
    populated by ``backward`` with an array of identical shape. Leaves with
    ``requires_grad`` start with an eager zero gradient so that parameters
    never reachable from a loss still report an exact zero gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self):
        """A graph-free view of the same values."""
        return Tensor(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def item(self):
        return float(self.data.reshape(()))

    def backward(self):
        """Accumulate gradients of this (scalar) node into all reachable leaves."""
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar loss")
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
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = node.grad + g if node.grad is not None else g.copy()
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    # operator sugar (scalar operands are broadcast constants)
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _node(data, parents, backward):
    """Internal graph node; collapses to a constant if no parent needs grads."""
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad or p._backward is not None)
    if live:
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_binary(a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"operands not broadcastable: {a.shape} vs {b.shape}") from None


def add(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _check_binary(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(out, (a, b), backward)


def sub(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _check_binary(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(out, (a, b), backward)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _wrap(a, b)
    b = _wrap(b, a)
    _check_binary(a, b)
    out = a.data * b.data

    def backward(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return _node(out, (a, b), backward)


def relu(a):
    out = np.maximum(a.data, 0)

    def backward(g):
        return (g * (a.data > 0),)

    return _node(out, (a,), backward)


def sigmoid(a):
    out = ck.stable_sigmoid(a.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return _node(out, (a,), backward)


def tanh(a):
    out = np.tanh(a.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return _node(out, (a,), backward)


def exp(a):
    out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _node(out, (a,), backward)


def log(a):
    out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _node(out, (a,), backward)


def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None):
    axes = _axis_tuple(axis, a.data.ndim)
    out = a.data.sum(axis=axes) if a.data.ndim else a.data.copy()

    def backward(g):
        ge = np.expand_dims(g, axes) if axes else g
        # read-only broadcast view is fine: accumulation never mutates in place
        return (np.broadcast_to(ge, a.shape),)

    return _node(out, (a,), backward)


def mean(a, axis=None):
    axes = _axis_tuple(axis, a.data.ndim)
    n = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    out = a.data.mean(axis=axes) if a.data.ndim else a.data.copy()

    def backward(g):
        ge = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(ge, a.shape) / a.dtype.type(n),)

    return _node(out, (a,), backward)


def reshape(a, shape):
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _node(out, (a,), backward)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _node(out, (a, b), backward)


def concat(tensors, axis):
    datas = [t.data for t in tensors]
    base = list(datas[0].shape)
    for d in datas[1:]:
        chk = list(d.shape)
        chk[axis] = base[axis]
        if chk != base:
            raise ShapeError("concat operands differ outside the concat axis")
    out = np.concatenate(datas, axis=axis)
    splits = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), backward)


def narrow(a, axis, start, length):
    """Contiguous slice along one axis (used for per-step sequence access)."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = a.data[idx].copy()

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _node(out, (a,), backward)


def conv2d(x, k, stride=(1, 1), pad=(0, 0)):
    """Strided cross-correlation; accepts (C,Q,N) or (B,C,Q,N) input."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or k.data.ndim != 4:
        raise ShapeError("conv2d expects (B,C,Q,N) input and (Co,Ci,kh,kw) kernel")
    out = ck.corr2d(xd, k.data, stride, pad)
    in_spatial = xd.shape[2:]

    def backward(g):
        gd = g[None] if squeeze else g
        dx = ck.corr2d_grad_input(gd, k.data, stride, pad, in_spatial)
        dk = ck.corr2d_grad_kernel(xd, gd, stride, pad, k.shape)
        return dx[0] if squeeze else dx, dk

    return _node(out[0] if squeeze else out, (x, k), backward)


def conv2d_transpose(x, k, stride=(1, 1), pad=(0, 0), out_pad=(0, 0)):
    """Transposed correlation (shape inverse of conv2d); kernel (Ci,Co,kh,kw)."""
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or k.data.ndim != 4:
        raise ShapeError("conv2d_transpose expects 4-D kernel")
    out = ck.tconv2d(xd, k.data, stride, pad, out_pad)
    in_spatial = xd.shape[2:]

    def backward(g):
        gd = g[None] if squeeze else g
        dx = ck.tconv2d_grad_input(gd, k.data, stride, pad, in_spatial)
        dk = ck.tconv2d_grad_kernel(xd, gd, stride, pad, k.shape)
        return dx[0] if squeeze else dx, dk

    return _node(out[0] if squeeze else out, (x, k), backward)


def mse(a, b):
    """Mean squared error over all elements -> scalar."""
    if a.shape != b.shape:
        raise ShapeError(f"mse shapes differ: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    out = np.asarray((diff * diff).mean(), dtype=a.dtype)
    n = a.dtype.type(a.size)

    def backward(g):
        d = (2.0 * g / n) * diff
        return d, -d

    return _node(out, (a, b), backward)


def l1_norm(a):
    """Mean absolute value over all elements -> scalar."""
    out = np.asarray(np.abs(a.data).mean(), dtype=a.dtype)
    n = a.dtype.type(a.size)

    def backward(g):
        return ((g / n) * np.sign(a.data),)

    return _node(out, (a,), backward)


def softmax_cross_entropy(logits, labels):
    """-log softmax(logits)[label], averaged over the batch.

    logits: (S,) or (B,S); labels: int or int array (B,).
    """
    ld = logits.data
    single = ld.ndim == 1
    lm = ld[None] if single else ld
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    B, S = lm.shape
    if lab.shape != (B,):
        raise ShapeError(f"labels shape {lab.shape} does not match batch {B}")
    if lab.min() < 0 or lab.max() >= S:
        raise ShapeError(f"label out of range for {S} classes")
    shifted = lm - lm.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    out = np.asarray(-logp[np.arange(B), lab].mean(), dtype=ld.dtype)

    def backward(g):
        grad = np.exp(logp)
        grad[np.arange(B), lab] -= 1.0
        grad *= g / ld.dtype.type(B)
        return (grad[0] if single else grad,)

    return _node(out, (logits,), backward)


def kl_std_normal(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, 1)) summed over elements, batch-averaged.

    4-D inputs are treated as (B, ...) with the sum taken per item; lower
    ranks are treated as a single item.
    """
    if mu.shape != logvar.shape:
        raise ShapeError("mu/logvar shapes differ")
    batch = mu.shape[0] if mu.data.ndim == 4 else 1
    ev = np.exp(logvar.data)
    total = 0.5 * (mu.data * mu.data + ev - 1.0 - logvar.data).sum()
    out = np.asarray(total / batch, dtype=mu.dtype)
    scale = mu.dtype.type(1.0 / batch)

    def backward(g):
        return (g * scale) * mu.data, (g * 0.5 * scale) * (ev - 1.0)

    return _node(out, (mu, logvar), backward)


def sample_reparam(mu, logvar, rng):
    """z = mu + exp(logvar/2) * eps with eps ~ N(0, I) from ``rng``.

    Gradients flow through mu and logvar only; eps is a recorded constant.
    """
    if mu.shape != logvar.shape:
        raise ShapeError("mu/logvar shapes differ")
    eps = rng.standard_normal(mu.shape, dtype=mu.dtype)
    std = np.exp(0.5 * logvar.data)
    out = mu.data + std * eps

    def backward(g):
        return g, g * (0.5 * std * eps)

    return _node(out, (mu, logvar), backward)
