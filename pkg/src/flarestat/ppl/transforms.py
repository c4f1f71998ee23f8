"""Bijections between constrained parameter spaces and unconstrained R^n.

Each constraint maps a flat unconstrained slice ``u`` to a constrained value
and reports ``log|det dx/du|`` so that densities written on the constrained
scale can be sampled on the unconstrained one.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import DomainError, ValidationError
from . import tape as ad


class Constraint:
    name = "real"

    def free_size(self, shape):
        return int(np.prod(shape, dtype=int))

    def forward(self, u, shape):
        raise NotImplementedError

    def inverse(self, x):
        raise NotImplementedError

    def check(self, x, tol=1e-10):
        return bool(np.all(np.isfinite(x)))

    def __str__(self):
        return self.name


class Real(Constraint):
    name = "real"

    def forward(self, u, shape):
        return ad.reshape(u, shape), 0.0

    def inverse(self, x):
        return np.asarray(x, dtype=float).ravel()


class Positive(Constraint):
    name = "positive"

    def forward(self, u, shape):
        if not ad.is_var(u):
            return np.exp(u).reshape(shape), np.sum(u)
        uv = u.value
        ev = np.exp(uv)
        x = ad.Var(ev.reshape(shape), u._tape, ((u, lambda g: np.reshape(g, uv.shape) * ev),))
        return x, ad.sum(u)

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(~(x > 0)):
            raise DomainError("positive constraint requires x > 0")
        return np.log(x).ravel()

    def check(self, x, tol=1e-10):
        return bool(np.all(np.asarray(x) > 0))


class UnitInterval(Constraint):
    name = "unit_interval"

    def forward(self, u, shape):
        log_j = ad.sum(ad.log_sigmoid(u) + ad.log_sigmoid(-u))
        return ad.reshape(ad.sigmoid(u), shape), log_j

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        if np.any(~((x > 0) & (x < 1))):
            raise DomainError("unit_interval constraint requires 0 < x < 1")
        return special.logit(x).ravel()

    def check(self, x, tol=1e-10):
        x = np.asarray(x)
        return bool(np.all((x > 0) & (x < 1)))


@dataclass(frozen=True)
class Simplex(Constraint):
    """Centered stick-breaking; the origin maps to the uniform simplex."""

    k: int

    @property
    def name(self):
        return f"simplex({self.k})"

    def free_size(self, shape):
        return self.k - 1

    def forward(self, u, shape):
        k = self.k
        if k == 1:
            return np.ones(1), 0.0
        offsets = np.log(np.arange(k - 1, 0, -1, dtype=float))
        t = u - offsets
        log_z = ad.log_sigmoid(t)
        log_1mz = ad.log_sigmoid(-t)
        # log of stick length remaining before each break
        log_rem = ad.concatenate([np.zeros(1), ad.cumsum(log_1mz)])
        log_x = ad.concatenate([log_rem[: k - 1] + log_z, log_rem[k - 1 : k]])
        log_j = ad.sum(log_z + log_1mz + log_rem[: k - 1])
        return ad.exp(log_x), log_j

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.k,) or np.any(x <= 0) or abs(x.sum() - 1.0) > 1e-8:
            raise DomainError(f"simplex({self.k}) requires a positive vector summing to 1")
        k = self.k
        rem = 1.0 - np.concatenate([[0.0], np.cumsum(x)[:-1]])
        z = x[: k - 1] / rem[: k - 1]
        return special.logit(z) + np.log(np.arange(k - 1, 0, -1, dtype=float))

    def check(self, x, tol=1e-10):
        x = np.asarray(x)
        return bool(np.all(x >= 0) and abs(x.sum() - 1.0) < tol)


@dataclass(frozen=True)
class CholeskyCorr(Constraint):
    """Cholesky factor of a correlation matrix from tanh partial correlations."""

    k: int

    @property
    def name(self):
        return f"cholesky_corr({self.k})"

    def free_size(self, shape):
        return self.k * (self.k - 1) // 2

    def forward(self, u, shape):
        k = self.k
        if k == 1:
            return np.ones((1, 1)), 0.0
        z = ad.tanh(u)
        log_j = ad.sum(ad.log1p(-ad.square(z)))
        rows = [ad.concatenate([np.ones(1), np.zeros(k - 1)])]
        pos = 0
        for i in range(1, k):
            entries = []
            sum_sq = 0.0
            for j in range(i):
                zij = z[pos]
                pos += 1
                if j == 0:
                    lij = zij
                else:
                    rem = 1.0 - sum_sq
                    lij = zij * ad.sqrt(rem)
                    log_j = log_j + 0.5 * ad.log(rem)
                entries.append(lij)
                sum_sq = sum_sq + ad.square(lij)
            entries.append(ad.sqrt(1.0 - sum_sq))
            row = ad.stack(entries)
            if i < k - 1:
                row = ad.concatenate([row, np.zeros(k - 1 - i)])
            rows.append(row)
        return ad.stack(rows), log_j

    def inverse(self, x):
        L = np.asarray(x, dtype=float)
        k = self.k
        if L.shape != (k, k) or not self.check(L, tol=1e-8):
            raise DomainError(f"cholesky_corr({k}) requires a lower-triangular factor with unit-norm rows")
        out = []
        for i in range(1, k):
            sum_sq = 0.0
            for j in range(i):
                denom = math.sqrt(max(1.0 - sum_sq, 0.0))
                zij = L[i, j] / denom
                if not abs(zij) < 1.0:
                    raise DomainError("partial correlation outside (-1, 1)")
                out.append(math.atanh(zij))
                sum_sq += L[i, j] ** 2
        return np.array(out)

    def check(self, x, tol=1e-10):
        L = np.asarray(x)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            return False
        if np.any(np.abs(np.triu(L, 1)) > tol) or np.any(np.diag(L) <= 0):
            return False
        return bool(np.all(np.abs(np.sum(L * L, axis=1) - 1.0) < tol))


real = Real()
positive = Positive()
unit_interval = UnitInterval()


def parse_constraint(text):
    """Inverse of ``str(constraint)``."""
    text = text.strip()
    simple = {"real": real, "positive": positive, "unit_interval": unit_interval}
    if text in simple:
        return simple[text]
    m = re.fullmatch(r"(simplex|cholesky_corr)\((\d+)\)", text)
    if not m:
        raise ValidationError(f"unknown constraint {text!r}")
    kind, k = m.group(1), int(m.group(2))
    return Simplex(k) if kind == "simplex" else CholeskyCorr(k)


@dataclass(frozen=True)
class ParamSpec:
    """A named block of the parameter vector."""

    name: str
    shape: tuple = ()
    constraint: Constraint = real

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        c = self.constraint
        if isinstance(c, Simplex) and self.shape != (c.k,):
            raise ValidationError(f"{self.name}: simplex({c.k}) needs shape ({c.k},)")
        if isinstance(c, CholeskyCorr) and self.shape != (c.k, c.k):
            raise ValidationError(f"{self.name}: cholesky_corr({c.k}) needs shape ({c.k}, {c.k})")

    @property
    def size(self):
        return int(np.prod(self.shape, dtype=int))

    @property
    def free_size(self):
        return self.constraint.free_size(self.shape)


def from_unconstrained(spec, u):
    """Constrained value for the unconstrained slice ``u``."""
    x, _ = spec.constraint.forward(np.asarray(u, dtype=float), spec.shape)
    return np.asarray(x, dtype=float).reshape(spec.shape)


def from_unconstrained_with_jacobian(spec, u):
    """Like :func:`from_unconstrained` but also returns ``log|det dx/du|``.

    Accepts tape variables, in which case both outputs are recorded.
    """
    return spec.constraint.forward(u, spec.shape)


def to_unconstrained(spec, x):
    """Unconstrained slice for ``x`` and the log-Jacobian of the inverse map at it."""
    u = spec.constraint.inverse(x)
    _, log_j = spec.constraint.forward(u, spec.shape)
    return u, float(log_j)
