"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every elementary operation applied to its
:class:`Var` objects together with the vector-Jacobian product (VJP) of
that operation.  :func:`grad_scalar` replays the tape backwards.

Every operation in this module accepts plain ``ndarray`` inputs as well as
``Var`` inputs.  When none of the arguments is a ``Var`` the operation is
evaluated eagerly with numpy and nothing is recorded, so the same model code
serves both the differentiable training path and fast prediction.

Batched linear algebra (leading batch dimensions) is supported for
:func:`cholesky`, :func:`solve_triangular` and :func:`solve`.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class NumericError(FloatingPointError):
    """A recorded operation produced a non-finite value."""

    def __init__(self, message: str, index: int | None = None, op: str | None = None):
        super().__init__(message)
        self.index = index
        self.op = op


class Tape:
    """Linear record of operations; one recording per tape."""

    def __init__(self):
        self._parents: list[tuple] = []
        self._names: list[str] = []
        self._shapes: list[tuple] = []

    def __len__(self):
        return len(self._names)

    def variable(self, value) -> "Var":
        """Register an independent input."""
        return self._record(np.array(value, dtype=float), "input", ())

    def _record(self, value, name, parents) -> "Var":
        idx = len(self._names)
        if not np.all(np.isfinite(value)):
            raise NumericError(
                f"non-finite value produced by operation #{idx} ({name})", index=idx, op=name
            )
        self._parents.append(parents)
        self._names.append(name)
        self._shapes.append(np.shape(value))
        return Var(value, self, idx)

    def gradient(self, output: "Var", wrt: "Var") -> np.ndarray:
        if output.tape is not self or wrt.tape is not self:
            raise ValueError("variables belong to a different tape")
        if np.size(output.value) != 1:
            raise ValueError("gradient requires a scalar output")
        adj: list = [None] * (output.index + 1)
        adj[output.index] = np.ones(self._shapes[output.index])
        for i in range(output.index, wrt.index, -1):
            g = adj[i]
            if g is None:
                continue
            adj[i] = None
            for p, vjp in self._parents[i]:
                contrib = vjp(g)
                adj[p] = contrib if adj[p] is None else adj[p] + contrib
        g = adj[wrt.index]
        if g is None:
            return np.zeros(self._shapes[wrt.index])
        return np.array(g, dtype=float).reshape(self._shapes[wrt.index])


class Var:
    """A value tracked on a :class:`Tape`."""

    __array_priority__ = 100.0

    def __init__(self, value: np.ndarray, tape: Tape, index: int):
        self.value = value
        self.tape = tape
        self.index = index

    def __repr__(self):
        return f"Var(#{self.index}, shape={self.shape})"

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def ndim(self):
        return np.ndim(self.value)

    @property
    def mT(self):
        return swap_last(self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def value_of(x):
    """Underlying numpy value of ``x`` (``Var`` or array-like)."""
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _apply(name: str, fn: Callable, vjps: Sequence[Callable | None], *args):
    """Evaluate ``fn`` on raw values and record it if any argument is a Var.

    ``vjps[i]`` maps (upstream gradient, output value, *raw args) to the
    gradient for argument ``i``; ``None`` marks a non-differentiable slot.
    """
    raw = [value_of(a) for a in args]
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is not None and a.tape is not tape:
                raise ValueError("mixing variables from different tapes")
            tape = a.tape
    if tape is None:
        return fn(*raw)
    with np.errstate(all="ignore"):      # non-finite values raise NumericError on record
        out = np.asarray(fn(*raw), dtype=float)
    parents = []
    for i, a in enumerate(args):
        if isinstance(a, Var) and vjps[i] is not None:
            vjp = vjps[i]
            parents.append((a.index, lambda g, vjp=vjp: vjp(g, out, *raw)))
    return tape._record(out, name, tuple(parents))


# --- elementwise -----------------------------------------------------------

def add(a, b):
    return _apply(
        "add", np.add,
        (lambda g, o, a, b: _unbroadcast(g, np.shape(a)),
         lambda g, o, a, b: _unbroadcast(g, np.shape(b))),
        a, b,
    )


def subtract(a, b):
    return _apply(
        "subtract", np.subtract,
        (lambda g, o, a, b: _unbroadcast(g, np.shape(a)),
         lambda g, o, a, b: _unbroadcast(-g, np.shape(b))),
        a, b,
    )


def multiply(a, b):
    return _apply(
        "multiply", np.multiply,
        (lambda g, o, a, b: _unbroadcast(g * b, np.shape(a)),
         lambda g, o, a, b: _unbroadcast(g * a, np.shape(b))),
        a, b,
    )


def divide(a, b):
    return _apply(
        "divide", np.divide,
        (lambda g, o, a, b: _unbroadcast(g / b, np.shape(a)),
         lambda g, o, a, b: _unbroadcast(-g * o / b, np.shape(b))),
        a, b,
    )


def negative(a):
    return _apply("negative", np.negative, (lambda g, o, a: -g,), a)


def power(a, p: float):
    p = float(p)
    return _apply(
        "power", lambda a: np.power(a, p),
        (lambda g, o, a: g * p * np.power(a, p - 1.0),),
        a,
    )


def square(a):
    return _apply("square", np.square, (lambda g, o, a: 2.0 * g * a,), a)


def sqrt(a):
    return _apply("sqrt", np.sqrt, (lambda g, o, a: 0.5 * g / o,), a)


def exp(a):
    return _apply("exp", np.exp, (lambda g, o, a: g * o,), a)


def log(a):
    return _apply("log", np.log, (lambda g, o, a: g / a,), a)


def tanh(a):
    return _apply("tanh", np.tanh, (lambda g, o, a: g * (1.0 - o * o),), a)


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    # exp of a non-positive argument only
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x):
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a):
    return _apply("sigmoid", _sigmoid, (lambda g, o, a: g * o * (1.0 - o),), a)


def softplus(a):
    """log(1 + exp(a)), overflow-safe."""
    return _apply("softplus", _softplus, (lambda g, o, a: g * _sigmoid(a),), a)


# --- reductions and shape --------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001
    def vjp(g, o, a):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, np.shape(a)).copy()

    return _apply("sum", lambda a: np.sum(a, axis=axis, keepdims=keepdims), (vjp,), a)


def mean(a, axis=None):
    n = np.size(value_of(a)) if axis is None else np.shape(value_of(a))[axis]
    return sum(a, axis=axis) / float(n)


def reshape(a, shape):
    return _apply(
        "reshape", lambda a: np.reshape(a, shape),
        (lambda g, o, a: np.reshape(g, np.shape(a)),),
        a,
    )


def take(a, idx):
    """Basic/advanced indexing ``a[idx]``."""
    def vjp(g, o, a):
        out = np.zeros(np.shape(a))
        np.add.at(out, idx, g)
        return out

    return _apply("getitem", lambda a: np.asarray(a)[idx], (vjp,), a)


def swap_last(a):
    return _apply(
        "swap_last", lambda a: np.swapaxes(a, -1, -2),
        (lambda g, o, a: np.swapaxes(g, -1, -2),),
        a,
    )


def expand_dims(a, axis):
    return reshape(a, np.expand_dims(value_of(a), axis).shape)


def diagonal(a):
    """Diagonal over the last two axes."""
    def vjp(g, o, a):
        out = np.zeros(np.shape(a))
        n = np.shape(a)[-1]
        out[..., np.arange(n), np.arange(n)] = g
        return out

    return _apply("diagonal", lambda a: np.diagonal(a, axis1=-2, axis2=-1).copy(), (vjp,), a)


def diag_embed(a):
    """Place the last axis of ``a`` on the diagonal of a square matrix."""
    def fwd(a):
        n = np.shape(a)[-1]
        out = np.zeros(np.shape(a) + (n,))
        out[..., np.arange(n), np.arange(n)] = a
        return out

    return _apply(
        "diag_embed", fwd,
        (lambda g, o, a: np.diagonal(g, axis1=-2, axis2=-1).copy(),),
        a,
    )


def stack(items, axis=0):
    items = list(items)
    tape = next((x.tape for x in items if isinstance(x, Var)), None)
    raw = [value_of(x) for x in items]
    out = np.stack(raw, axis=axis)
    if tape is None:
        return out
    parents = []
    for i, x in enumerate(items):
        if isinstance(x, Var):
            parents.append((x.index, lambda g, i=i: np.take(g, i, axis=axis)))
    return tape._record(out, "stack", tuple(parents))


def concatenate(items, axis=0):
    items = list(items)
    tape = next((x.tape for x in items if isinstance(x, Var)), None)
    raw = [value_of(x) for x in items]
    out = np.concatenate(raw, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([0] + [np.shape(r)[axis] for r in raw])
    parents = []
    for i, x in enumerate(items):
        if isinstance(x, Var):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parents.append((x.index, lambda g, sl=tuple(sl): g[sl]))
    return tape._record(out, "concatenate", tuple(parents))


# --- linear algebra --------------------------------------------------------

def matmul(a, b):
    """Matrix product; both operands must have ndim >= 2."""
    if np.ndim(value_of(a)) < 2 or np.ndim(value_of(b)) < 2:
        raise ValueError("matmul operands must be at least 2-D")
    return _apply(
        "matmul", np.matmul,
        (lambda g, o, a, b: _unbroadcast(g @ np.swapaxes(b, -1, -2), np.shape(a)),
         lambda g, o, a, b: _unbroadcast(np.swapaxes(a, -1, -2) @ g, np.shape(b))),
        a, b,
    )


def _tril_half(x):
    out = np.tril(x)
    n = x.shape[-1]
    out[..., np.arange(n), np.arange(n)] *= 0.5
    return out


def cholesky(a):
    """Lower Cholesky factor.  Gradient assumes symmetric perturbations."""
    def vjp(g, L, a):
        Lt = np.swapaxes(L, -1, -2)
        P = _tril_half(Lt @ g)
        X = np.linalg.solve(Lt, P)
        S = np.swapaxes(np.linalg.solve(Lt, np.swapaxes(X, -1, -2)), -1, -2)
        return 0.5 * (S + np.swapaxes(S, -1, -2))

    return _apply("cholesky", np.linalg.cholesky, (vjp,), a)


def solve_triangular(L, b):
    """Solve ``L x = b`` for lower-triangular ``L`` (batched)."""
    def fwd(L, b):
        return np.linalg.solve(L, b)

    def vjp_L(g, x, L, b):
        gb = np.linalg.solve(np.swapaxes(L, -1, -2), g)
        return _unbroadcast(-np.tril(gb @ np.swapaxes(x, -1, -2)), np.shape(L))

    def vjp_b(g, x, L, b):
        return _unbroadcast(np.linalg.solve(np.swapaxes(L, -1, -2), g), np.shape(b))

    return _apply("solve_triangular", fwd, (vjp_L, vjp_b), L, b)


def solve(A, b):
    """Solve ``A x = b`` for a general square ``A`` (batched)."""
    def vjp_A(g, x, A, b):
        gb = np.linalg.solve(np.swapaxes(A, -1, -2), g)
        return _unbroadcast(-(gb @ np.swapaxes(x, -1, -2)), np.shape(A))

    def vjp_b(g, x, A, b):
        return _unbroadcast(np.linalg.solve(np.swapaxes(A, -1, -2), g), np.shape(b))

    return _apply("solve", np.linalg.solve, (vjp_A, vjp_b), A, b)


def logdet_from_cholesky(L):
    """log|A| given the lower Cholesky factor ``L`` of ``A`` (per batch)."""
    return 2.0 * sum(log(diagonal(L)), axis=-1)


# --- driver ----------------------------------------------------------------

def grad_scalar(loss_builder: Callable, params) -> np.ndarray:
    """Gradient of the scalar ``loss_builder(theta)`` at ``params``.

    ``loss_builder`` receives a :class:`Var` holding a copy of ``params``.
    A builder that ignores its argument (a constant) gets a zero gradient.
    """
    g, _ = value_and_grad(loss_builder, params)
    return g


def value_and_grad(loss_builder: Callable, params):
    params = np.asarray(params, dtype=float)
    tape = Tape()
    theta = tape.variable(params)
    out = loss_builder(theta)
    if not isinstance(out, Var) or out.tape is not tape:
        val = float(np.asarray(out))
        if not np.isfinite(val):
            raise NumericError("non-finite constant loss")
        return np.zeros_like(params), val
    if np.size(out.value) != 1:
        raise ValueError(f"loss must be scalar, got shape {out.shape}")
    return tape.gradient(out, theta), float(out.value.reshape(()))
