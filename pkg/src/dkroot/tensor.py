"""A small reverse-mode autodiff over numpy arrays.

Only the primitives the models need are provided: conv1d, dense, ReLU,
layer normalization, reductions, concatenation, broadcasting arithmetic,
nearest upsampling, embedding lookup, logsumexp/log-softmax and row-wise
l2 normalization. Everything runs in float64.
"""

from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class NumericError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() on a non-scalar tensor needs an explicit gradient")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # arithmetic ---------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, reciprocal(other))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("non-finite value produced by a tensor operation")
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise -------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def reciprocal(a) -> Tensor:
    if np.any(a.data == 0):
        raise NumericError("division by zero")
    r = 1.0 / a.data
    return _result(r, (a,), lambda g: (-g * r * r,))


def square(a) -> Tensor:
    return _result(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Tensor:
    if np.any(a.data < 0):
        raise NumericError("sqrt of a negative value")
    r = np.sqrt(a.data)
    return _result(r, (a,), lambda g: (g * 0.5 / np.where(r > 0, r, np.inf),))


def exp(a) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return _result(e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    if np.any(a.data <= 0):
        raise NumericError("log of a non-positive value")
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


# shape ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    old = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def take(a, idx) -> Tensor:
    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), back)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def broadcast_to(a, shape) -> Tensor:
    return _result(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (_unbroadcast(g, a.shape),))


def upsample(a, factor=2) -> Tensor:
    """Nearest-neighbour repeat along the last (time) axis."""
    def back(g):
        return (g.reshape(*g.shape[:-1], g.shape[-1] // factor, factor).sum(-1),)

    return _result(np.repeat(a.data, factor, axis=-1), (a,), back)


def embedding(table, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError("embedding index out of range")
    return take(table, idx)


# reductions ------------------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def logsumexp(a, axis=-1, mask=None) -> Tensor:
    """Max-shifted logsumexp along ``axis``; entries where ``mask`` is False are left out."""
    x = a.data
    if x.size == 0:
        raise ValueError("logsumexp of an empty input")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not np.all(mask.any(axis=axis)):
            raise ValueError("logsumexp mask excludes every entry of a row")
        xm = np.where(mask, x, -np.inf)
    else:
        xm = x
    mx = np.max(xm, axis=axis, keepdims=True)
    e = np.exp(xm - mx)
    s = e.sum(axis=axis, keepdims=True)
    out = (mx + np.log(s)).squeeze(axis)
    p = e / s

    def back(g):
        return (np.expand_dims(g, axis) * p,)

    return _result(out, (a,), back)


def log_softmax(a, axis=-1) -> Tensor:
    x = a.data
    mx = x.max(axis=axis, keepdims=True)
    z = x - mx
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _result(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis=-1) -> Tensor:
    x = a.data
    if x.size == 0:
        raise ValueError("softmax of an empty input")
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    p = e / e.sum(axis=axis, keepdims=True)
    return _result(p, (a,), lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),))


def l2_normalize(a, axis=-1) -> Tensor:
    norm = np.sqrt((a.data**2).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise NumericError("cannot l2-normalize an all-zero vector")
    y = a.data / norm
    return _result(y, (a,), lambda g: ((g - y * (g * y).sum(axis=axis, keepdims=True)) / norm,))


# linear maps ---------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.outer(a.data, g)
        return ga.reshape(a.shape), gb.reshape(b.shape)

    return _result(a.data @ b.data, (a, b), back)


def dense(x, weight, bias=None) -> Tensor:
    """Affine map ``x @ weight.T + bias``; x is (n,) or (batch, n), weight is (p, n)."""
    x, weight = _as_tensor(x), _as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"dense: input width {x.shape[-1]} does not match weight {weight.shape}")
    if bias is not None and _as_tensor(bias).shape != (weight.shape[0],):
        raise ValueError(f"dense: bias shape {_as_tensor(bias).shape} does not match weight {weight.shape}")
    out = matmul(x, transpose(weight))
    return out + bias if bias is not None else out


def conv1d(x, kernels, bias=None, stride=1) -> Tensor:
    """Same-padded cross-correlation over time.

    x: (c_in, l) or (batch, c_in, l); kernels: (c_out, c_in, k) with k odd.
    With stride s the output length is ceil(l / s).
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    single = x.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3:
        raise ValueError(f"conv1d: input must be (c_in, l) or (batch, c_in, l), got {x.shape}")
    c_out, c_in, k = kernels.shape
    if k % 2 != 1:
        raise ValueError("conv1d: kernel size must be odd for same padding")
    if xd.shape[1] != c_in:
        raise ValueError(f"conv1d: input has {xd.shape[1]} channels, kernels expect {c_in}")
    if bias is not None and _as_tensor(bias).shape != (c_out,):
        raise ValueError(f"conv1d: bias must have shape ({c_out},)")
    n, _, length = xd.shape
    pad = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad))) if pad else xd
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride]  # (n, c_in, lo, k)
    lo = win.shape[2]
    cols = win.transpose(0, 2, 1, 3).reshape(n * lo, c_in * k)
    wmat = kernels.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).reshape(n, lo, c_out).transpose(0, 2, 1)
    parents = [x, kernels]
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data[None, :, None]
        parents.append(bias)
    if single:
        out = out[0]

    def back(g):
        g3 = g[None] if single else g
        g2 = g3.transpose(0, 2, 1).reshape(n * lo, c_out)
        gw = (g2.T @ cols).reshape(kernels.shape)
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, lo, c_in, k)
            gxp = np.zeros_like(xp)
            span = stride * (lo - 1) + 1
            for j in range(k):
                gxp[:, :, j:j + span:stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, pad:pad + length] if pad else gxp
            if single:
                gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g3.sum(axis=(0, 2)))
        return tuple(grads)

    return _result(out, parents, back)


def layer_norm(x, gain=None, bias=None, axes=(-2, -1), eps=1e-5) -> Tensor:
    """Normalize each sample over ``axes`` (channels x time by default)."""
    mu = mean(x, axis=axes, keepdims=True)
    xc = x - mu
    var = mean(square(xc), axis=axes, keepdims=True)
    y = xc * reciprocal(sqrt(var + eps))
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def mse(pred, target) -> Tensor:
    d = pred - target
    return mean(square(d))
