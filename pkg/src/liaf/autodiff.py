"""Tape-based reverse-mode differentiation over numpy arrays.

Every primitive accepts plain arrays or :class:`Var` nodes. When a
:class:`Tape` is active and at least one operand is a ``Var`` that requires
gradients, the primitive records a node on the tape; otherwise it returns a
plain ``ndarray``. Layer code is therefore written once and runs both as a
numeric reference and under BPTT.

The same primitives report their scalar multiply/add counts to an active
:class:`OpCounter`, which is how instrumented cost counting works.

Example::

    w = Var(np.array(3.0))
    with Tape() as tape:
        y = mul(w, w)
    tape.backward(y)
    w.grad  # 6.0
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import tensor as T

_local = threading.local()


class AutodiffError(RuntimeError):
    pass


# ---------------------------------------------------------------- counting


@dataclass
class OpCounter:
    """Scalar operation tallies for one instrumented invocation."""

    muls: int = 0
    adds: int = 0
    other: int = 0


def _counter_stack():
    s = getattr(_local, "counters", None)
    if s is None:
        s = _local.counters = []
    return s


@contextmanager
def counting(counter: OpCounter):
    """Route op counts from primitives executed in this block to ``counter``."""
    stack = _counter_stack()
    stack.append((counter, False))
    try:
        yield counter
    finally:
        stack.pop()


@contextmanager
def as_other():
    """Count every MUL/ADD inside the block under ``other``.

    Used for work the cost model treats as look-up, selection or
    comparison (activations, normalisation, pooling, threshold shift).
    """
    stack = _counter_stack()
    if not stack:
        yield
        return
    stack.append((stack[-1][0], True))
    try:
        yield
    finally:
        stack.pop()


def _count(muls=0, adds=0, other=0):
    stack = getattr(_local, "counters", None)
    if not stack:
        return
    c, to_other = stack[-1]
    if to_other:
        c.other += int(muls) + int(adds) + int(other)
    else:
        c.muls += int(muls)
        c.adds += int(adds)
        c.other += int(other)


# -------------------------------------------------------------- tape / vars


def _tape_stack():
    s = getattr(_local, "tapes", None)
    if s is None:
        s = _local.tapes = []
    return s


def current_tape():
    s = _tape_stack()
    return s[-1] if s else None


class Var:
    """A differentiable value. Leaves hold parameters; inner nodes ops."""

    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "name", "index")

    def __init__(self, value, requires_grad: bool = True, name: str | None = None):
        self.value = np.asarray(value, dtype=T.DTYPE)
        self.grad = None
        self.parents = ()
        self.backward_fn = None
        self.requires_grad = requires_grad
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Var(name={self.name!r}, shape={self.value.shape})"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)


class Tape:
    """Records op nodes in creation order, which is a topological order."""

    def __init__(self):
        self.nodes: list[Var] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()

    def record(self, node: Var):
        node.index = len(self.nodes)
        self.nodes.append(node)

    def backward(self, loss: Var):
        """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf."""
        if not isinstance(loss, Var) or loss.index < 0:
            raise AutodiffError("loss is not a node recorded on this tape")
        if loss.value.size != 1:
            raise AutodiffError(f"loss must be scalar, got shape {loss.value.shape}")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.index + 1]):
            g = node.grad
            if g is None:
                continue
            grads = node.backward_fn(g)
            for p, gp in zip(node.parents, grads):
                if gp is None or not isinstance(p, Var) or not p.requires_grad:
                    continue
                if p.index >= node.index:
                    raise AutodiffError("tape is not topologically ordered")
                gp = np.asarray(gp, dtype=T.DTYPE)
                if gp.shape != p.value.shape:
                    gp = _unbroadcast(gp, p.value.shape)
                p.grad = gp if p.grad is None else p.grad + gp


def backward(tape: Tape, loss: Var):
    tape.backward(loss)


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=T.DTYPE)


def _tracked(*xs):
    return any(isinstance(x, Var) and x.requires_grad for x in xs)


def _node(out, parents, backward_fn):
    tape = current_tape()
    if tape is None or not _tracked(*parents):
        return out
    v = Var(out, requires_grad=True)
    v.parents = parents
    v.backward_fn = backward_fn
    tape.record(v)
    return v


def _unbroadcast(g, shape):
    if g.shape == tuple(shape):
        return g
    nd = g.ndim - len(shape)
    if nd > 0:
        g = g.sum(axis=tuple(range(nd)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ------------------------------------------------------------- arithmetic


def add(a, b):
    av, bv = value(a), value(b)
    out = av + bv
    _count(adds=out.size)
    return _node(out, (a, b), lambda g: (g, g))


def sub(a, b):
    av, bv = value(a), value(b)
    out = av - bv
    _count(adds=out.size)
    return _node(out, (a, b), lambda g: (g, -g))


def mul(a, b):
    av, bv = value(a), value(b)
    out = av * bv
    _count(muls=out.size)
    return _node(out, (a, b), lambda g: (g * bv, g * av))


def div(a, b):
    av, bv = value(a), value(b)
    out = av / bv
    _count(muls=out.size)
    return _node(out, (a, b), lambda g: (g / bv, -g * av / (bv * bv)))


def neg(a):
    out = -value(a)
    _count(other=out.size)
    return _node(out, (a,), lambda g: (-g,))


def one_minus(a):
    """``1 - a``; counted as a table look-up (e.g. ``1 - sigmoid(x)``)."""
    out = 1.0 - value(a)
    _count(other=out.size)
    return _node(out, (a,), lambda g: (-g,))


def matmul(a, w, binary_input: bool = False):
    """``(N, K) @ (K, L)``.

    With ``binary_input`` the products are selections of weight rows and
    are not counted as multiplications.
    """
    av, wv = value(a), value(w)
    out = T.matmul(av, wv)
    n, k = av.shape
    l = wv.shape[1]
    if binary_input:
        _count(adds=n * l * (k - 1), other=n * l * k)
    else:
        _count(muls=n * l * k, adds=n * l * (k - 1))
    return _node(out, (a, w), lambda g: (g @ wv.T, av.T @ g))


def conv2d(x, k, padding: int = 0, binary_input: bool = False):
    xv, kv = value(x), value(k)
    out = T.conv2d(xv, kv, padding)
    q = kv.shape[0] * kv.shape[1] * kv.shape[2]
    if binary_input:
        _count(adds=out.size * (q - 1), other=out.size * q)
    else:
        _count(muls=out.size * q, adds=out.size * (q - 1))

    def bw(g):
        gx = T.conv2d_grad_input(g, kv, padding, xv.shape) if _tracked(x) else None
        gk = T.conv2d_grad_kernel(xv, g, padding, kv.shape) if _tracked(k) else None
        return gx, gk

    return _node(out, (x, k), bw)


def conv3d(x, k, padding=(0, 0, 0)):
    xv, kv = value(x), value(k)
    out = T.conv3d(xv, kv, padding)
    q = int(np.prod(kv.shape[:4]))
    _count(muls=out.size * q, adds=out.size * (q - 1))

    def bw(g):
        gx = T.conv3d_grad_input(g, kv, padding, xv.shape) if _tracked(x) else None
        gk = T.conv3d_grad_kernel(xv, g, padding, kv.shape) if _tracked(k) else None
        return gx, gk

    return _node(out, (x, k), bw)


# ---------------------------------------------------------------- shaping


def reshape(x, shape):
    xv = value(x)
    out = xv.reshape(shape)
    return _node(out, (x,), lambda g: (g.reshape(xv.shape),))


def transpose(x, axes):
    xv = value(x)
    inv = np.argsort(axes)
    return _node(xv.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def take_time(x, t: int):
    """Slice ``x[:, t]`` of a ``(B, T, ...)`` tensor."""
    xv = value(x)

    def bw(g):
        gx = np.zeros_like(xv)
        gx[:, t] = g
        return (gx,)

    return _node(xv[:, t], (x,), bw)


def stack_time(xs):
    """Stack a list of ``(B, ...)`` tensors into ``(B, T, ...)``."""
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=1)
    return _node(out, tuple(xs), lambda g: tuple(g[:, t] for t in range(len(vals))))


def sum(x, axis=None, keepdims: bool = False):  # noqa: A001 - mirrors numpy
    xv = value(x)
    out = np.sum(xv, axis=axis, keepdims=keepdims)
    _count(adds=xv.size - np.size(out))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return _node(np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims: bool = False):
    xv = value(x)
    n = xv.size if axis is None else int(np.prod([xv.shape[a] for a in np.atleast_1d(axis)]))
    s = sum(x, axis=axis, keepdims=keepdims)
    return mul(s, 1.0 / n)


def mean_time(x):
    """Temporal mean of ``(B, T, ...)``: elementwise sum over T divided by T."""
    xv = value(x)
    return div(sum(x, axis=1), float(xv.shape[1]))


def avg_pool2d(x, win):
    xv = value(x)
    out = T.avg_pool2d(xv, win)
    _count(other=xv.size)
    return _node(out, (x,), lambda g: (T.avg_pool2d_grad(g, win),))


# ----------------------------------------------------------- nonlinearity


def _elementwise(x, f, df):
    xv = value(x)
    out = f(xv)
    _count(other=out.size)
    return _node(out, (x,), lambda g: (g * df(xv, out),))


def exp(x):
    return _elementwise(x, np.exp, lambda x, y: y)


def log(x):
    return _elementwise(x, np.log, lambda x, y: 1.0 / x)


def sqrt(x):
    return _elementwise(x, np.sqrt, lambda x, y: 0.5 / y)


def tanh(x):
    return _elementwise(x, np.tanh, lambda x, y: 1.0 - y * y)


def _sigmoid(x):
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x):
    return _elementwise(x, _sigmoid, lambda x, y: y * (1.0 - y))


def relu(x):
    return _elementwise(x, lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0).astype(T.DTYPE))


SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def selu(x):
    def f(x):
        return SELU_SCALE * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))

    def df(x, y):
        return SELU_SCALE * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))

    return _elementwise(x, f, df)


def identity(x):
    return x


def spike(x, mu: float):
    """Heaviside ``x >= 0`` with rectangular pseudo-derivative ``|x| < mu``."""
    xv = value(x)
    out = (xv >= 0).astype(T.DTYPE)
    _count(other=out.size)
    return _node(out, (x,), lambda g: (g * (np.abs(xv) < mu),))


def where(cond, a, b):
    """Select ``a`` where ``cond`` else ``b``; ``cond`` is not differentiated."""
    c = np.asarray(value(cond)) != 0
    av, bv = value(a), value(b)
    out = np.where(c, av, bv)
    _count(other=out.size)
    return _node(out, (a, b), lambda g: (np.where(c, g, 0.0), np.where(c, 0.0, g)))


def gather_rows(table, ids):
    """Embedding look-up: ``table[ids]`` with scatter-add backward."""
    tv = value(table)
    ids = np.asarray(ids, dtype=np.int64)

    def bw(g):
        gt = np.zeros_like(tv)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, tv.shape[1]))
        return (gt,)

    return _node(tv[ids], (table,), bw)


def softmax(x, axis: int = -1):
    xv = value(x)
    z = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    _count(other=out.size)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (x,), bw)


# ----------------------------------------------------------------- losses

CLAMP_EPS = 1e-12


def cross_entropy(probs, onehot):
    """Mean over the batch of ``-sum(y * log(p))`` with ``p`` clamped."""
    pv = value(probs)
    y = np.asarray(onehot, dtype=T.DTYPE)
    pc = np.clip(pv, CLAMP_EPS, 1.0)
    b = pv.shape[0]
    out = np.asarray(-(y * np.log(pc)).sum() / b)
    inside = (pv >= CLAMP_EPS) & (pv <= 1.0)
    return _node(out, (probs,), lambda g: (g * np.where(inside, -y / pc, 0.0) / b,))


def binary_cross_entropy(p, y):
    """Mean over the batch of ``-[y log p + (1-y) log(1-p)]`` summed per sample."""
    pv = value(p)
    y = np.asarray(y, dtype=T.DTYPE)
    pc = np.clip(pv, CLAMP_EPS, 1.0 - CLAMP_EPS)
    b = pv.shape[0] if pv.ndim else 1
    out = np.asarray(-(y * np.log(pc) + (1 - y) * np.log(1 - pc)).sum() / b)
    inside = (pv >= CLAMP_EPS) & (pv <= 1.0 - CLAMP_EPS)
    d = -y / pc + (1 - y) / (1 - pc)
    return _node(out, (p,), lambda g: (g * np.where(inside, d, 0.0) / b,))
