"""Tape-based reverse-mode differentiation over dense float64 arrays.

Operations only record themselves while a :class:`Tape` is active and at
least one input requires a gradient, so the same forward code serves both
training (recorded) and inference (plain numpy with a thin wrapper).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


_TAPES: list["Tape"] = []
_RELAXED = [False]


class Node:
    __slots__ = ("value", "grad", "op", "parents", "requires_grad", "name", "_backward")

    def __init__(self, value, parents=(), op="const", requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.name = name
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = self.name or self.op
        return f"Node({label}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def param(value, name=None) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=True, op="param", name=name)


def const(value) -> Node:
    return value if isinstance(value, Node) else Node(value)


class Tape:
    """Ordered record of one forward pass; backward replays it in reverse."""

    def __init__(self):
        self.entries: list[Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()

    def backward(self, loss: Node, seed_grad=None) -> None:
        loss.grad = np.ones_like(loss.value) if seed_grad is None else np.asarray(seed_grad, dtype=np.float64)
        for node in reversed(self.entries):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def _record(value, parents, op, backward) -> Node:
    parents = tuple(parents)
    track = bool(_TAPES) and any(p.requires_grad for p in parents)
    out = Node(value, parents, op, requires_grad=track)
    if track:
        out._backward = backward
        _TAPES[-1].entries.append(out)
    return out


def _accum(node: Node, g) -> None:
    if not node.requires_grad:
        return
    g = np.asarray(g, dtype=np.float64)
    if g.shape != node.value.shape:
        g = _unbroadcast(g, node.value.shape)
    if node.grad is None:
        node.grad = g.copy()
    else:
        node.grad = node.grad + g


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise and linear algebra

def add(a, b) -> Node:
    a, b = const(a), const(b)
    _check_broadcast(a.value, b.value, "add")

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _record(a.value + b.value, (a, b), "add", backward)


def sub(a, b) -> Node:
    a, b = const(a), const(b)
    _check_broadcast(a.value, b.value, "sub")

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _record(a.value - b.value, (a, b), "sub", backward)


def mul(a, b) -> Node:
    a, b = const(a), const(b)
    _check_broadcast(a.value, b.value, "mul")

    def backward(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return _record(a.value * b.value, (a, b), "mul", backward)


def scale(a, c: float) -> Node:
    a = const(a)
    c = float(c)
    return _record(a.value * c, (a,), "scale", lambda g: _accum(a, g * c))


def matmul(a, b) -> Node:
    a, b = const(a), const(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.value.shape} and {b.value.shape}")

    def backward(g):
        if b.value.ndim == 1:
            _accum(a, np.outer(g, b.value))
            _accum(b, a.value.T @ g)
        else:
            _accum(a, g @ b.value.T)
            _accum(b, a.value.T @ g)

    return _record(a.value @ b.value, (a, b), "matmul", backward)


def spmm(m: sp.spmatrix, x, m_t: sp.spmatrix | None = None) -> Node:
    """Constant sparse matrix times a dense node; ``m_t`` may supply ``m.T`` in CSR form."""
    x = const(x)
    if m.shape[1] != x.value.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {m.shape} and {x.value.shape}")

    def backward(g):
        mt = m.T.tocsr() if m_t is None else m_t
        _accum(x, mt @ g)

    return _record(np.asarray(m @ x.value), (x,), "spmm", backward)


def reduce_sum(a, axis=None) -> Node:
    a = const(a)
    shape = a.value.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, shape))

    return _record(a.value.sum(axis=axis), (a,), "sum", backward)


def mean(a, axis=None) -> Node:
    a = const(a)
    count = a.value.size if axis is None else a.value.shape[axis]
    return scale(reduce_sum(a, axis), 1.0 / count)


def reshape(a, shape) -> Node:
    a = const(a)
    old = a.value.shape
    return _record(a.value.reshape(shape), (a,), "reshape", lambda g: _accum(a, g.reshape(old)))


def concat(nodes: Sequence, axis=0) -> Node:
    nodes = [const(n) for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as err:
        raise ShapeError(f"concat: {err}") from None
    bounds = np.cumsum([0] + [n.value.shape[axis] for n in nodes])

    def backward(g):
        for n, lo, hi in zip(nodes, bounds[:-1], bounds[1:]):
            _accum(n, np.take(g, np.arange(lo, hi), axis=axis))

    return _record(out, nodes, "concat", backward)


def stack(nodes: Sequence, axis=0) -> Node:
    nodes = [const(n) for n in nodes]
    out = np.stack([n.value for n in nodes], axis=axis)

    def backward(g):
        for i, n in enumerate(nodes):
            _accum(n, np.take(g, i, axis=axis))

    return _record(out, nodes, "stack", backward)


def take_rows(a, idx) -> Node:
    a = const(a)
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _record(a.value[idx], (a,), "take_rows", backward)


def pick(a, cols) -> Node:
    """``a[i, cols[i]]`` for every row ``i``."""
    a = const(a)
    cols = np.asarray(cols, dtype=np.int64)
    rows = np.arange(len(cols))

    def backward(g):
        full = np.zeros_like(a.value)
        np.add.at(full, (rows, cols), g)
        _accum(a, full)

    return _record(a.value[rows, cols], (a,), "pick", backward)


# ---------------------------------------------------------------------------
# nonlinearities

def tanh(a) -> Node:
    a = const(a)
    y = np.tanh(a.value)
    return _record(y, (a,), "tanh", lambda g: _accum(a, g * (1.0 - y * y)))


def sigmoid(a) -> Node:
    a = const(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _record(y, (a,), "sigmoid", lambda g: _accum(a, g * y * (1.0 - y)))


def log(a) -> Node:
    a = const(a)
    return _record(np.log(a.value), (a,), "log", lambda g: _accum(a, g / a.value))


def clip(a, lo: float, hi: float) -> Node:
    a = const(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _record(np.clip(a.value, lo, hi), (a,), "clip", lambda g: _accum(a, g * inside))


def softmax(a, axis=-1) -> Node:
    a = const(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        _accum(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _record(y, (a,), "softmax", backward)


def log_softmax(a, axis=-1) -> Node:
    a = const(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        _accum(a, g - p * g.sum(axis=axis, keepdims=True))

    return _record(y, (a,), "log_softmax", backward)


# ---------------------------------------------------------------------------
# spiking and adversarial primitives

def surrogate_grad(x, width: float):
    """Rectangular surrogate for dH/dx: ``1/width`` inside ``|x| < width/2``."""
    if width <= 0:
        raise ValueError("surrogate width must be positive")
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) < width / 2, 1.0 / width, 0.0)


def relaxed_step(x, width: float):
    """The ramp whose derivative is exactly :func:`surrogate_grad`."""
    return np.clip(np.asarray(x, dtype=np.float64) / width + 0.5, 0.0, 1.0)


@contextlib.contextmanager
def relaxed_spikes():
    """Replace the Heaviside forward by its ramp relaxation (gradient checking only)."""
    prev = _RELAXED[0]
    _RELAXED[0] = True
    try:
        yield
    finally:
        _RELAXED[0] = prev


def spikes_relaxed() -> bool:
    return _RELAXED[0]


def heaviside_sg(x, width: float) -> Node:
    """Exact step forward (H(0) = 1), rectangular surrogate backward."""
    x = const(x)
    if width <= 0:
        raise ValueError("surrogate width must be positive")
    if _RELAXED[0]:
        y = relaxed_step(x.value, width)
    else:
        y = (x.value >= 0.0).astype(np.float64)
    return _record(y, (x,), "heaviside_sg", lambda g: _accum(x, g * surrogate_grad(x.value, width)))


def leaky_integrate(u, last_spikes, current, thresholds, leak: float) -> Node:
    """``leak * (u - thresholds * last_spikes) + current`` as one tape entry."""
    u, last_spikes, current = const(u), const(last_spikes), const(current)
    th = np.asarray(thresholds, dtype=np.float64)
    if u.value.shape != current.value.shape or u.value.shape != last_spikes.value.shape:
        raise ShapeError(f"leaky_integrate: shapes {u.value.shape}, {last_spikes.value.shape}, {current.value.shape}")
    out = leak * (u.value - th * last_spikes.value) + current.value

    def backward(g):
        _accum(u, leak * g)
        _accum(last_spikes, -leak * th * g)
        _accum(current, g)

    return _record(out, (u, last_spikes, current), "leaky_integrate", backward)


def reset(u, spikes, v_reset: float) -> Node:
    """``(1 - spikes) * u + spikes * v_reset``."""
    u, spikes = const(u), const(spikes)
    out = (1.0 - spikes.value) * u.value + spikes.value * v_reset

    def backward(g):
        _accum(u, g * (1.0 - spikes.value))
        _accum(spikes, g * (v_reset - u.value))

    return _record(out, (u, spikes), "reset", backward)


def grad_reverse(x, lambda_coeff: float) -> Node:
    """Identity forward; backward multiplies the gradient by ``-lambda_coeff``."""
    x = const(x)
    c = float(lambda_coeff)
    return _record(x.value.copy(), (x,), "grad_reverse", lambda g: _accum(x, -c * g))


def detach(x) -> Node:
    return Node(const(x).value)


# ---------------------------------------------------------------------------
# gradient checking

def value_and_grad(f: Callable[[], Node], params: Sequence[Node]):
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        out = f()
    if out.value.size != 1:
        raise ShapeError("value_and_grad needs a scalar output")
    tape.backward(out)
    grads = [np.zeros_like(p.value) if p.grad is None else p.grad for p in params]
    return float(out.value), grads


def check_gradients(
    f: Callable[[], Node],
    params: Iterable[Node],
    eps: float = 1e-5,
    max_coords: int = 64,
    seed: int = 0,
    relaxed: bool = True,
) -> float:
    """Max relative error between tape gradients and central differences.

    Up to ``max_coords`` coordinates (all of them when fewer exist) are
    sampled across ``params``. Heaviside ops are evaluated through their ramp
    relaxation when ``relaxed`` is set, which is the function the surrogate
    gradient is the exact derivative of.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    ctx = relaxed_spikes() if relaxed else contextlib.nullcontext()
    with ctx:
        f0, grads = value_and_grad(f, params)
        if not np.isfinite(f0):
            raise NumericError("function value is not finite")
        coords = [(pi, j) for pi, p in enumerate(params) for j in range(p.value.size)]
        rng = np.random.default_rng(seed)
        if len(coords) > max_coords:
            pick_idx = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick_idx)]
        worst = 0.0
        for pi, j in coords:
            p = params[pi]
            flat = p.value.reshape(-1)
            orig = flat[j]
            flat[j] = orig + eps
            fp = float(f().value)
            flat[j] = orig - eps
            fm = float(f().value)
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericError("function value is not finite")
            fd = (fp - fm) / (2 * eps)
            an = grads[pi].reshape(-1)[j]
            err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            worst = max(worst, err)
    return worst
