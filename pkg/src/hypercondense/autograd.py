"""Define-by-run reverse-mode differentiation over dense float64 arrays.

Usage::

    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        loss = reduce_sum(x * x)
    tape.backward(loss)      # x.grad == 2 * x.data

Operations executed while a tape is active are recorded on it; outside a
tape they only compute values. ``backward`` walks the records in exact
reverse order and *adds* into ``.grad`` of every ``requires_grad`` leaf, so
calling it twice without :meth:`Tensor.zero_grad` accumulates.
"""
from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

from .errors import NonScalarLoss, ShapeMismatch

RSQRT_EPS = 1e-12
RECIP_EPS = 1e-12

_active: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("active_tape", default=None)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, other)
        return elementwise_mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Record:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered log of differentiable operations."""

    def __init__(self):
        self.records: list[_Record] = []
        self._token = None

    def __enter__(self):
        self._token = _active.set(self)
        return self

    def __exit__(self, *exc):
        _active.reset(self._token)
        self._token = None

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor, seed=1.0):
        if loss.data.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
        grads = {id(loss): np.full(loss.shape, seed, dtype=np.float64)}
        leaves = {}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not _needs(t):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if t.requires_grad:
                    leaves[key] = t
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            t.grad = g.copy() if t.grad is None else t.grad + g


def _record(inputs: Sequence[Tensor], out_data, backward: Callable) -> Tensor:
    out = _Out(out_data)
    tape = _active.get()
    if tape is not None and any(_needs(t) for t in inputs):
        out._on_tape = True
        tape.records.append(_Record(tuple(inputs), out, backward))
    return out


# Intermediate results carry ``_on_tape`` so backward can tell them from constants.
class _Out(Tensor):
    __slots__ = ("_on_tape",)

    def __init__(self, data):
        super().__init__(data)
        self._on_tape = False


def _needs(t) -> bool:
    return isinstance(t, Tensor) and (t.requires_grad or getattr(t, "_on_tape", False))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    sa, sb = a.shape, b.shape
    if sa == sb or a.data.size == 1 or b.data.size == 1:
        return
    try:
        np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeMismatch(op, sa, sb) from None
    if len(sa) != len(sb):
        raise ShapeMismatch(op, sa, sb)


# -- arithmetic ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _record((a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _record((a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def scalar_mul(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record((a,), a.data * c, lambda g: (g * c,))


def elementwise_mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("elementwise_mul", a, b)
    return _record((a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)

    def back(g):
        ga = g @ b.data.T if _needs(a) else None
        gb = a.data.T @ g if _needs(b) else None
        return ga, gb

    return _record((a, b), a.data @ b.data, back)


def sparse_matmul(m, b) -> Tensor:
    """Constant (sparse or dense) matrix times tensor."""
    b = as_tensor(b)
    if m.shape[1] != b.shape[0]:
        raise ShapeMismatch("sparse_matmul", m.shape, b.shape)
    mt = m.T
    return _record((b,), np.asarray(m @ b.data), lambda g: (np.asarray(mt @ g),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _record((a,), a.data.T.copy(), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record((a,), a.data.reshape(shape), lambda g: (g.reshape(old),))


def concat_rows(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    cols = {p.shape[1:] for p in parts}
    if len(cols) != 1:
        raise ShapeMismatch("concat_rows", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])
    return _record(parts, np.concatenate([p.data for p in parts], axis=0),
                   lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts))))


def concat_cols(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if len({p.shape[0] for p in parts}) != 1:
        raise ShapeMismatch("concat_cols", *(p.shape for p in parts))
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    return _record(parts, np.concatenate([p.data for p in parts], axis=1),
                   lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts))))


def gather_rows(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _record((a,), a.data[idx], back)


def index(a, key) -> Tensor:
    """Fancy/basic indexing; repeated indices accumulate in backward."""
    a = as_tensor(a)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return _record((a,), a.data[key], back)


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record((a,), np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), back)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scalar_mul(reduce_sum(a, axis=axis), 1.0 / n)


# -- elementwise nonlinearities ------------------------------------------------

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record((a,), s, lambda g: (g * s * (1.0 - s),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record((a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _record((a,), e, lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _record((a,), np.log(a.data), lambda g: (g / a.data,))


def rsqrt(a, eps=RSQRT_EPS) -> Tensor:
    """(x + eps)^-1/2, finite at 0."""
    a = as_tensor(a)
    r = (a.data + eps) ** -0.5
    return _record((a,), r, lambda g: (-0.5 * g * r ** 3,))


def reciprocal(a, eps=RECIP_EPS) -> Tensor:
    a = as_tensor(a)
    r = 1.0 / (a.data + eps)
    return _record((a,), r, lambda g: (-g * r * r,))


def logsumexp(a, axis=None, keepdims=False) -> Tensor:
    """Max-shifted log-sum-exp."""
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = m + np.log(s)
    soft = e / s
    if not keepdims:
        out = out.reshape(()) if axis is None else np.squeeze(out, axis=axis)

    def back(g):
        if not keepdims:
            g = g.reshape(()) if axis is None else np.expand_dims(g, axis)
        return (g * soft,)

    return _record((a,), out, back)


def row_l2_norm(a) -> Tensor:
    """Euclidean norm of every row, as an (n, 1) column."""
    a = as_tensor(a)
    nrm = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))

    def back(g):
        safe = np.where(nrm > 0, nrm, 1.0)
        return (g * a.data / safe,)

    return _record((a,), nrm, back)


def normalize_rows(a) -> Tensor:
    return elementwise_mul(a, reciprocal(row_l2_norm(a), eps=0.0))


def cosine_similarity(a, b) -> Tensor:
    """Pairwise cosine matrix between rows of ``a`` and rows of ``b``."""
    return matmul(normalize_rows(a), transpose(normalize_rows(b)))


def log_softmax(a) -> Tensor:
    return sub(a, logsumexp(a, axis=1, keepdims=True))
