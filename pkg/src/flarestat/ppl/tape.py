"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation applied to its :class:`Var` objects in
evaluation order. :meth:`Tape.gradient` sweeps the record backwards once,
accumulating adjoints, so one forward pass plus one backward pass yields the
full gradient of a scalar output.

Every public function in this module is polymorphic: given plain numbers or
arrays it simply evaluates with numpy, given at least one :class:`Var` it
records a node. Model code is therefore written once and used both for
differentiation and for cheap numeric evaluation.
"""

from __future__ import annotations

import numpy as np
from scipy import linalg as sla
from scipy import special

__all__ = [
    "fused",
    "Tape",
    "Var",
    "is_var",
    "value_of",
    "exp",
    "log",
    "log1p",
    "expm1",
    "sqrt",
    "square",
    "sin",
    "cos",
    "tanh",
    "sigmoid",
    "log_sigmoid",
    "softplus",
    "gammaln",
    "absolute",
    "sum",
    "cumsum",
    "logsumexp",
    "matmul",
    "dot",
    "stack",
    "concatenate",
    "reshape",
    "take",
    "diagonal",
    "cholesky",
    "solve_triangular",
]


def _unbroadcast(g, shape):
    g = np.asarray(g, dtype=float)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Linear record of operations; one instance per gradient evaluation."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def variable(self, value):
        """Create an input (leaf) variable."""
        return Var(np.asarray(value, dtype=float), self, ())

    def __len__(self):
        return len(self._nodes)

    def gradient(self, output, inputs):
        """Adjoints of scalar ``output`` with respect to each of ``inputs``."""
        if not isinstance(output, Var) or output._tape is not self:
            return [np.zeros_like(v.value) for v in inputs]
        if output.value.size != 1:
            raise ValueError("gradient requires a scalar output")
        adj = [None] * len(self._nodes)
        adj[output._idx] = np.ones_like(output.value)
        for i in range(output._idx, -1, -1):
            g = adj[i]
            if g is None:
                continue
            for parent, vjp in self._nodes[i]._parents:
                contrib = vjp(g)
                j = parent._idx
                adj[j] = contrib if adj[j] is None else adj[j] + contrib
        out = []
        for v in inputs:
            g = adj[v._idx]
            out.append(np.zeros_like(v.value) if g is None else np.asarray(g, dtype=float).reshape(v.value.shape))
        return out


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "_tape", "_parents", "_idx")
    __array_priority__ = 1000

    def __init__(self, value, tape, parents):
        self.value = value
        self._tape = tape
        self._parents = parents
        self._idx = len(tape._nodes)
        tape._nodes.append(self)

    def __repr__(self):
        return f"Var({self.value!r})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    def __len__(self):
        return len(self.value)

    @property
    def T(self):
        return _node(self.value.T, ((self, lambda g: np.asarray(g).T),))

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return _node(-self.value, ((self, lambda g: -g),))

    def __pow__(self, k):
        if isinstance(k, Var):
            return exp(log(self) * k)
        k = float(k)
        x = self.value
        y = x**k
        return _node(y, ((self, lambda g: g * k * x ** (k - 1.0)),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        x = self.value
        y = x[key]

        basic = _is_basic_index(key)

        def vjp(g):
            z = np.zeros_like(x)
            if basic:
                z[key] = g
            else:
                np.add.at(z, key, g)
            return z

        return _node(np.array(y, dtype=float), ((self, vjp),))

    def sum(self, axis=None):
        return sum(self, axis=axis)


def is_var(x):
    return isinstance(x, Var)


def value_of(x):
    """Strip the tape from ``x``; plain inputs pass through."""
    return x.value if isinstance(x, Var) else x


def _is_basic_index(key):
    """True when ``key`` selects each element at most once (no fancy indexing)."""
    keys = key if isinstance(key, tuple) else (key,)
    return all(k is None or k is Ellipsis or isinstance(k, (int, np.integer, slice)) for k in keys)


def _node(value, parents):
    tape = parents[0][0]._tape
    return Var(np.asarray(value, dtype=float), tape, parents)


def _unary(x, f, df):
    """``df(x, y, g)`` maps the upstream adjoint to the input adjoint."""
    if not isinstance(x, Var):
        return f(x)
    xv = x.value
    y = f(xv)
    return _node(y, ((x, lambda g: df(xv, y, g)),))


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.add(a, b)
    av, bv = value_of(a), value_of(b)
    y = np.add(av, bv)
    parents = []
    if isinstance(a, Var):
        sa = a.value.shape
        parents.append((a, lambda g: _unbroadcast(g, sa)))
    if isinstance(b, Var):
        sb = b.value.shape
        parents.append((b, lambda g: _unbroadcast(g, sb)))
    return _node(y, tuple(parents))


def subtract(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.subtract(a, b)
    y = np.subtract(value_of(a), value_of(b))
    parents = []
    if isinstance(a, Var):
        sa = a.value.shape
        parents.append((a, lambda g: _unbroadcast(g, sa)))
    if isinstance(b, Var):
        sb = b.value.shape
        parents.append((b, lambda g: -_unbroadcast(g, sb)))
    return _node(y, tuple(parents))


def multiply(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.multiply(a, b)
    av, bv = value_of(a), value_of(b)
    y = np.multiply(av, bv)
    parents = []
    if isinstance(a, Var):
        sa = a.value.shape
        parents.append((a, lambda g: _unbroadcast(g * bv, sa)))
    if isinstance(b, Var):
        sb = b.value.shape
        parents.append((b, lambda g: _unbroadcast(g * av, sb)))
    return _node(y, tuple(parents))


def divide(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.divide(a, b)
    av, bv = value_of(a), value_of(b)
    y = np.divide(av, bv)
    parents = []
    if isinstance(a, Var):
        sa = a.value.shape
        parents.append((a, lambda g: _unbroadcast(g / bv, sa)))
    if isinstance(b, Var):
        sb = b.value.shape
        parents.append((b, lambda g: _unbroadcast(-g * y / bv, sb)))
    return _node(y, tuple(parents))


# ------------------------------------------------------------ elementwise


def exp(x):
    return _unary(x, np.exp, lambda x, y, g: g * y)


def log(x):
    return _unary(x, np.log, lambda x, y, g: g / x)


def log1p(x):
    return _unary(x, np.log1p, lambda x, y, g: g / (1.0 + x))


def expm1(x):
    return _unary(x, np.expm1, lambda x, y, g: g * (y + 1.0))


def sqrt(x):
    return _unary(x, np.sqrt, lambda x, y, g: g * 0.5 / y)


def square(x):
    return _unary(x, np.square, lambda x, y, g: g * 2.0 * x)


def sin(x):
    return _unary(x, np.sin, lambda x, y, g: g * np.cos(x))


def cos(x):
    return _unary(x, np.cos, lambda x, y, g: -g * np.sin(x))


def tanh(x):
    return _unary(x, np.tanh, lambda x, y, g: g * (1.0 - y * y))


def absolute(x):
    return _unary(x, np.abs, lambda x, y, g: g * np.sign(x))


def sigmoid(x):
    """Inverse logit."""
    return _unary(x, special.expit, lambda x, y, g: g * y * (1.0 - y))


def log_sigmoid(x):
    """``log(sigmoid(x))`` without overflow."""
    return _unary(x, special.log_expit, lambda x, y, g: g * special.expit(-x))


def softplus(x):
    """``log(1 + exp(x))``."""
    return _unary(x, lambda v: np.logaddexp(0.0, v), lambda x, y, g: g * special.expit(x))


def gammaln(x):
    return _unary(x, special.gammaln, lambda x, y, g: g * special.digamma(x))


def fused(value, pairs):
    """Record an elementwise result with hand-derived partial derivatives.

    ``pairs`` holds ``(arg, partial)`` where ``partial()`` returns
    ``d value / d arg`` elementwise; it is only called for tape variables.
    Returns plain ``value`` when no argument is on a tape.
    """
    parents = []
    for arg, partial in pairs:
        if isinstance(arg, Var):
            shape = arg.value.shape
            parents.append((arg, lambda g, d=partial, s=shape: _unbroadcast(g * d(), s)))
    if not parents:
        return value
    return _node(value, tuple(parents))


# -------------------------------------------------------------- reductions


def sum(x, axis=None):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis)
    xv = x.value
    y = np.sum(xv, axis=axis)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.ones(xv.shape) * g

    return _node(y, ((x, vjp),))


def cumsum(x, axis=-1):
    if not isinstance(x, Var):
        return np.cumsum(x, axis=axis)
    y = np.cumsum(x.value, axis=axis)

    def vjp(g):
        return np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)

    return _node(y, ((x, vjp),))


def logsumexp(x, axis=None):
    if not isinstance(x, Var):
        return special.logsumexp(x, axis=axis)
    xv = x.value
    y = special.logsumexp(xv, axis=axis)

    def vjp(g):
        g = np.asarray(g)
        yy = np.asarray(y)
        if axis is not None:
            g = np.expand_dims(g, axis)
            yy = np.expand_dims(yy, axis)
        with np.errstate(invalid="ignore"):
            w = np.exp(xv - yy)
        return g * np.nan_to_num(w)

    return _node(y, ((x, vjp),))


# ------------------------------------------------------------ linear algebra


def matmul(a, b):
    if not isinstance(a, Var) and not isinstance(b, Var):
        return np.matmul(a, b)
    av, bv = np.asarray(value_of(a)), np.asarray(value_of(b))
    y = av @ bv
    parents = []
    if isinstance(a, Var):
        if bv.ndim == 1:
            parents.append((a, lambda g: np.multiply.outer(g, bv)))
        else:
            parents.append((a, lambda g: np.asarray(g) @ bv.T))
    if isinstance(b, Var):
        if av.ndim == 1:
            parents.append((b, lambda g: np.multiply.outer(av, g)))
        else:
            parents.append((b, lambda g: av.T @ np.asarray(g)))
    return _node(y, tuple(parents))


def dot(a, b):
    """Inner product of two vectors."""
    return sum(multiply(a, b))


def diagonal(x):
    if not isinstance(x, Var):
        return np.diagonal(x).copy()
    n = x.value.shape[0]
    y = np.diagonal(x.value).copy()

    def vjp(g):
        z = np.zeros((n, n))
        z[np.diag_indices(n)] = g
        return z

    return _node(y, ((x, vjp),))


def cholesky(a):
    """Lower Cholesky factor; raises ``numpy.linalg.LinAlgError`` if not PD."""
    if not isinstance(a, Var):
        return np.linalg.cholesky(a)
    L = np.linalg.cholesky(a.value)

    def vjp(g):
        n = L.shape[0]
        P = np.tril(L.T @ g)
        P[np.diag_indices(n)] *= 0.5
        # L^{-T} P L^{-1}
        tmp = sla.solve_triangular(L, P.T, lower=True, trans="T", check_finite=False)
        S = sla.solve_triangular(L, tmp.T, lower=True, trans="T", check_finite=False)
        return 0.5 * (S + S.T)

    return _node(L, ((a, vjp),))


def solve_triangular(L, b, lower=True):
    """Solve ``L x = b`` for lower-triangular ``L``."""
    if not isinstance(L, Var) and not isinstance(b, Var):
        return sla.solve_triangular(L, b, lower=lower)
    Lv, bv = np.asarray(value_of(L)), np.asarray(value_of(b))
    x = sla.solve_triangular(Lv, bv, lower=lower, check_finite=False)
    parents = []
    cache = {}

    def b_adj(g):
        if cache.get("g") is not g:
            cache["g"] = g
            cache["bbar"] = sla.solve_triangular(Lv, g, lower=lower, trans="T", check_finite=False)
        return cache["bbar"]

    if isinstance(L, Var):
        def vjp_L(g):
            bbar = b_adj(g)
            outer = np.multiply.outer(bbar, x) if x.ndim == 1 else bbar @ x.T
            return -(np.tril(outer) if lower else np.triu(outer))

        parents.append((L, vjp_L))
    if isinstance(b, Var):
        parents.append((b, b_adj))
    return _node(x, tuple(parents))


# ----------------------------------------------------------------- shaping


def reshape(x, shape):
    if not isinstance(x, Var):
        return np.reshape(x, shape)
    s0 = x.value.shape
    return _node(np.reshape(x.value, shape), ((x, lambda g: np.reshape(g, s0)),))


def take(x, idx, axis=0):
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    if not isinstance(x, Var):
        return np.take(x, idx, axis=axis)
    xv = x.value
    idx = np.asarray(idx)
    y = np.take(xv, idx, axis=axis)

    def vjp(g):
        z = np.zeros_like(xv)
        if axis == 0:
            np.add.at(z, idx, g)
        else:
            zm = np.moveaxis(z, axis, 0)
            np.add.at(zm, idx, np.moveaxis(g, axis, 0))
        return z

    return _node(y, ((x, vjp),))


def stack(xs, axis=0):
    xs = list(xs)
    if not any(isinstance(x, Var) for x in xs):
        return np.stack([np.asarray(x, dtype=float) for x in xs], axis=axis)
    vals = [np.asarray(value_of(x), dtype=float) for x in xs]
    y = np.stack(vals, axis=axis)
    parents = []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            parents.append((x, lambda g, i=i: np.take(g, i, axis=axis)))
    return _node(y, tuple(parents))


def concatenate(xs, axis=0):
    xs = list(xs)
    if not any(isinstance(x, Var) for x in xs):
        return np.concatenate([np.atleast_1d(np.asarray(x, dtype=float)) for x in xs], axis=axis)
    vals = [np.atleast_1d(np.asarray(value_of(x), dtype=float)) for x in xs]
    y = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([0] + [v.shape[axis] for v in vals])
    parents = []
    for i, x in enumerate(xs):
        if isinstance(x, Var):
            lo, hi = bounds[i], bounds[i + 1]
            shape = x.value.shape

            def vjp(g, lo=lo, hi=hi, shape=shape):
                sl = [slice(None)] * np.ndim(g)
                sl[axis] = slice(lo, hi)
                return np.reshape(g[tuple(sl)], shape)

            parents.append((x, vjp))
    return _node(y, tuple(parents))
