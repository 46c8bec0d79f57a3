"""A small reverse-mode autodiff engine on numpy arrays.

Only what the toy ViT and the architecture search need.  Binary ops
broadcast numpy-style and reduce gradients back to operand shapes.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import NotScalar, ShapeMismatch

__all__ = [
    "Tensor",
    "tensor",
    "matmul",
    "relu",
    "gelu_tanh",
    "softmax_rows",
    "relusoftmax_rows",
    "layernorm",
    "concat",
    "cross_entropy",
    "kl_div",
    "l2_norm",
    "gelu_tanh_np",
    "no_grad_value",
]

GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None) -> None:
        """Reverse sweep from this tensor; accumulates into ``.grad``."""
        if grad is None:
            if self.data.size != 1:
                raise NotScalar(f"backward needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
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
            if node.requires_grad and not node._parents:
                node._accum(g)
            if node._backward is None:
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs(p):
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                else:
                    grads[id(p)] = pg

    # operators
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _needs(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad)


def _make(data, parents, backward) -> Tensor:
    live = tuple(p for p in parents if _needs(p))
    if not live:
        return Tensor(data)
    return Tensor(data, False, tuple(parents), backward)


def no_grad_value(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# elementwise


def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, c: float) -> Tensor:
    a = tensor(a)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = tensor(a)
    m = a.data > 0
    return _make(np.where(m, a.data, 0.0), (a,), lambda g: (g * m,))


def gelu_tanh_np(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * x ** 3)))


def gelu_tanh(a) -> Tensor:
    a = tensor(a)
    x = a.data
    t = np.tanh(GELU_C * (x + 0.044715 * x ** 3))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * d,)

    return _make(out, (a,), bw)


# linear algebra and shape


def matmul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul shapes {a.shape} and {b.shape} not conformable")
    out = np.matmul(a.data, b.data)

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw)


def reshape(a, *shape) -> Tensor:
    a = tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = tensor(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    a = tensor(a)

    def bw(g):
        z = np.zeros_like(a.data)
        np.add.at(z, idx, g)
        return (z,)

    return _make(a.data[idx], (a,), bw)


def concat(parts, axis: int = 0) -> Tensor:
    parts = [tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    cuts = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(out, tuple(parts), bw)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = tensor(a)
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(tsum(a, axis, keepdims), 1.0 / n)


# normalisations


def _softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(a) -> Tensor:
    a = tensor(a)
    y = _softmax_np(a.data)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def relusoftmax_rows(a, eps: float = 1e-8) -> Tensor:
    """ReLU(x) / (sum ReLU(x) + eps) along the last axis."""
    a = tensor(a)
    m = a.data > 0
    r = np.where(m, a.data, 0.0)
    s = r.sum(axis=-1, keepdims=True) + eps
    y = r / s

    def bw(g):
        gr = g / s - (g * r).sum(axis=-1, keepdims=True) / (s * s)
        return (gr * m,)

    return _make(y, (a,), bw)


def layernorm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    x, gamma, beta = tensor(x), tensor(gamma), tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def bw(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return _make(out, (x, gamma, beta), bw)


# losses


def _log_softmax_np(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels``."""
    logits = tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatch(f"cross_entropy wants (B, C) logits and (B,) labels, got {logits.shape}, {labels.shape}")
    ls = _log_softmax_np(logits.data)
    b = logits.shape[0]
    loss = -ls[np.arange(b), labels].mean()

    def bw(g):
        p = np.exp(ls)
        p[np.arange(b), labels] -= 1.0
        return (g * p / b,)

    return _make(loss, (logits,), bw)


def kl_div(student_logits, teacher_logits, temperature: float = 1.0) -> Tensor:
    """Batch mean of KL(softmax(s/T) || softmax(t/T))."""
    s, t = tensor(student_logits), tensor(teacher_logits)
    if s.shape != t.shape:
        raise ShapeMismatch(f"kl_div shapes {s.shape} and {t.shape} differ")
    T = float(temperature)
    lp = _log_softmax_np(s.data / T)
    lq = _log_softmax_np(t.data / T)
    p, q = np.exp(lp), np.exp(lq)
    L = lp - lq
    b = s.shape[0] if s.ndim > 1 else 1
    val = (p * L).sum() / b

    def bw(g):
        gs = p * (L - (p * L).sum(axis=-1, keepdims=True)) / T / b
        gt = (q - p) / T / b
        return g * gs, g * gt

    return _make(val, (s, t), bw)


def l2_norm(x, axis=None) -> Tensor:
    """Euclidean norm over ``axis`` (all axes if None); gradient 0 at 0."""
    x = tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    out = n if axis is not None else n.reshape(())
    out = out.squeeze(axis=axis) if axis is not None else out

    def bw(g):
        gg = g if axis is None else np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, gg * x.data / safe, 0.0),)

    return _make(out, (x,), bw)
