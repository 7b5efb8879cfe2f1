"""Tiny reverse-mode autodiff over float64 numpy arrays.

Each op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients.  Nodes whose parents need no
gradient are built as constants, so a frozen sub-network costs no graph.
"""
from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

_recording = True


@contextmanager
def no_grad():
    """Build plain constants inside this block: no graph, no gradients."""
    global _recording
    saved, _recording = _recording, False
    try:
        yield
    finally:
        _recording = saved


class NonFiniteError(FloatingPointError):
    """A loss or gradient contained NaN or infinity."""


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=False):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f"Tensor({self.value!r})"

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

    def __getitem__(self, idx):
        return take(self, idx)


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64))


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _node(value, parents, backward_fn) -> Tensor:
    if _recording and any(p.requires_grad for p in parents):
        return Tensor(value, parents, backward_fn, True)
    return Tensor(value)


def _unbroadcast(grad, shape):
    if np.shape(grad) == shape:
        return grad
    while np.ndim(grad) > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = np.shape(a.value), np.shape(b.value)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def add_n(*xs) -> Tensor:
    xs = tuple(_as_tensor(x) for x in xs)
    total = xs[0].value
    for x in xs[1:]:
        total = total + x.value
    return _node(total, xs, lambda g: (g,) * len(xs))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = np.shape(a.value), np.shape(b.value)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    sa, sb = np.shape(av), np.shape(bv)
    return _node(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, sa), _unbroadcast(g * av, sb)))


def scale(a: Tensor, k: float) -> Tensor:
    return _node(a.value * k, (a,), lambda g: (g * k,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * a.value) + 1.0)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    v = a.value
    return _node(np.log(v), (a,), lambda g: (g / v,))


def square(a: Tensor) -> Tensor:
    v = a.value
    return _node(v * v, (a,), lambda g: (2.0 * g * v,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp; the gradient passes only where the input lies inside [lo, hi]."""
    v = a.value
    mask = (v >= lo) & (v <= hi)
    return _node(np.clip(v, lo, hi), (a,), lambda g: (g * mask,))


# ---- reductions / reshaping ---------------------------------------------

def total(a: Tensor) -> Tensor:
    shape = np.shape(a.value)
    return _node(np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_squares(a: Tensor) -> Tensor:
    v = a.value
    flat = v.ravel()
    return _node(float(np.dot(flat, flat)), (a,), lambda g: (2.0 * g * v,))


def dot(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value
    return _node(float(np.dot(av, bv)), (a, b), lambda g: (g * bv, g * av))


def take(a: Tensor, idx) -> Tensor:
    shape = np.shape(a.value)

    def backward(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _node(a.value[idx], (a,), backward)


def concat(xs) -> Tensor:
    xs = tuple(_as_tensor(x) for x in xs)
    sizes = np.cumsum([x.value.shape[0] for x in xs])[:-1]
    return _node(np.concatenate([x.value for x in xs]), xs,
                 lambda g: tuple(np.split(g, sizes)))


# ---- linear algebra ------------------------------------------------------

def affine(w: Tensor, x, b: Tensor) -> Tensor:
    """``w @ x + b`` for a matrix ``w`` (out, in).

    ``x`` is either one input vector or a batch of row vectors (batch, in).
    """
    w, x, b = _as_tensor(w), _as_tensor(x), _as_tensor(b)
    wv, xv = w.value, x.value
    if xv.ndim == 1:
        def backward(g):
            return np.outer(g, xv), wv.T @ g, g

        return _node(wv @ xv + b.value, (w, x, b), backward)

    def backward_batch(g):
        return g.T @ xv, g @ wv, g.sum(axis=0)

    return _node(xv @ wv.T + b.value, (w, x, b), backward_batch)


def matvec(w: Tensor, x) -> Tensor:
    w, x = _as_tensor(w), _as_tensor(x)
    wv, xv = w.value, x.value
    return _node(wv @ xv, (w, x), lambda g: (np.outer(g, xv), wv.T @ g))


def log_softmax(a: Tensor) -> Tensor:
    v = a.value
    shifted = v - v.max()
    lse = math.log(np.exp(shifted).sum())
    out = shifted - lse
    probs = np.exp(out)
    return _node(out, (a,), lambda g: (g - probs * g.sum(),))


# ---- backward ------------------------------------------------------------

def _topo_order(root: Tensor):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backprop(loss: Tensor) -> list[Tensor]:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node.

    Returns the reachable leaves that require gradients (typically parameters).
    Raises :class:`NonFiniteError` before touching any gradient if the loss
    is not finite.
    """
    value = np.asarray(loss.value)
    if value.size != 1:
        raise ValueError("backprop needs a scalar loss")
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite loss {float(value)}")
    if not loss.requires_grad:
        return []
    order = _topo_order(loss)
    loss.grad = np.ones_like(value, dtype=np.float64).reshape(np.shape(loss.value))
    leaves = []
    for node in reversed(order):
        g = node.grad
        if node.backward_fn is None:
            leaves.append(node)
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if not p.requires_grad:
                continue
            if p.grad is None:
                p.grad = pg
            else:
                p.grad = p.grad + pg
        node.grad = None
    return leaves
