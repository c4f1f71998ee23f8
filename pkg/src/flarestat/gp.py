"""Gaussian-process kernels, Gram matrices and exact conditioning.

Inputs are scalar month indices. Kernel hyperparameters may be plain
numbers or tape variables; in the latter case Gram matrices are built with
differentiable operations so the hyperparameters can be sampled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import NumericalError, ParameterError
from .ppl import tape as ad

DEFAULT_JITTER = 1e-6
SQRT5 = math.sqrt(5.0)


def _check_positive(name, **vals):
    for key, v in vals.items():
        if not ad.is_var(v) and not np.all(np.asarray(v) > 0):
            raise ParameterError(f"{name}: {key} must be positive, got {v!r}")


def _as_grid(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.ndim != 1:
        raise ParameterError("kernel inputs must be a 1-D grid of scalars")
    if not np.all(np.isfinite(x)):
        raise ParameterError("kernel inputs must be finite")
    return x


def _distance(x1, x2):
    return np.abs(x1[:, None] - x2[None, :])


class KernelExpr:
    """Base for kernel atoms and their sums and products."""

    def matrix(self, x1, x2):
        raise NotImplementedError

    def __call__(self, x, x2):
        return float(ad.value_of(self.matrix(_as_grid(x), _as_grid(x2)))[0, 0])

    def __add__(self, other):
        return Sum(self, other)

    def __mul__(self, other):
        return Product(self, other)


@dataclass(frozen=True)
class Matern52(KernelExpr):
    """``eta^2 (1 + sqrt5 r/l + 5 r^2 / (3 l^2)) exp(-sqrt5 r/l)``."""

    ell: object = 1.0
    eta: object = 1.0

    def __post_init__(self):
        _check_positive("Matern52", ell=self.ell, eta=self.eta)

    def matrix(self, x1, x2):
        z = SQRT5 * _distance(x1, x2) / self.ell
        return ad.square(self.eta) * ((1.0 + z + ad.square(z) / 3.0) * ad.exp(-z))


@dataclass(frozen=True)
class Periodic(KernelExpr):
    """``eta^2 exp(-sin^2(pi |x - x'| / T) / (2 l^2))``."""

    period: object = 12.0
    ell: object = 1.0
    eta: object = 1.0

    def __post_init__(self):
        _check_positive("Periodic", period=self.period, ell=self.ell, eta=self.eta)

    def matrix(self, x1, x2):
        s = ad.sin(math.pi * _distance(x1, x2) / self.period)
        return ad.square(self.eta) * ad.exp(-ad.square(s) / (2.0 * ad.square(self.ell)))


@dataclass(frozen=True)
class WhiteNoise(KernelExpr):
    """``delta^2`` on identical inputs, zero elsewhere."""

    delta: object = 1e-6

    def __post_init__(self):
        _check_positive("WhiteNoise", delta=self.delta)

    def matrix(self, x1, x2):
        same = (x1[:, None] == x2[None, :]).astype(float)
        return ad.square(self.delta) * same


@dataclass(frozen=True)
class Sum(KernelExpr):
    left: KernelExpr
    right: KernelExpr

    def matrix(self, x1, x2):
        return self.left.matrix(x1, x2) + self.right.matrix(x1, x2)


@dataclass(frozen=True)
class Product(KernelExpr):
    left: KernelExpr
    right: KernelExpr

    def matrix(self, x1, x2):
        return self.left.matrix(x1, x2) * self.right.matrix(x1, x2)


def kernel_eval(k, x, x2):
    """Scalar kernel value ``k(x, x2)``."""
    return k(x, x2)


def cross_cov(k, x1, x2):
    return k.matrix(_as_grid(x1), _as_grid(x2))


def gram_matrix(k, xs, jitter=DEFAULT_JITTER):
    """``K(xs, xs) + jitter I``; differentiable when ``k`` holds tape variables."""
    if jitter < 0:
        raise ParameterError("jitter must be non-negative")
    xs = _as_grid(xs)
    return k.matrix(xs, xs) + jitter * np.eye(xs.size)


def gram(k, xs, jitter=DEFAULT_JITTER):
    """Numeric Gram matrix and its lower Cholesky factor.

    A failed factorization is retried once with ten times the jitter.
    """
    xs = _as_grid(xs)
    K0 = np.asarray(ad.value_of(k.matrix(xs, xs)), dtype=float)
    K0 = 0.5 * (K0 + K0.T)
    for j in (jitter, 10.0 * jitter):
        K = K0 + j * np.eye(xs.size)
        try:
            return K, np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            continue
    lam = float(np.linalg.eigvalsh(K0).min())
    raise NumericalError(f"Gram matrix not positive definite after jitter retry (smallest eigenvalue {lam:.3e})")


def latent_noncentered(k, xs, f_tilde, jitter=DEFAULT_JITTER):
    """Realize ``f = L f_tilde`` with ``L L^T = K + jitter I`` (zero mean).

    ``f_tilde`` may also be a matrix whose columns are whitened vectors.
    """
    xs = _as_grid(xs)
    shape = np.shape(ad.value_of(f_tilde))
    if len(shape) not in (1, 2) or shape[0] != xs.size:
        raise ParameterError("whitened vector must match the grid length")
    if any(ad.is_var(v) for v in _hyper_values(k)):
        L = ad.cholesky(gram_matrix(k, xs, jitter))
    else:
        _, L = gram(k, xs, jitter)
    return ad.matmul(L, f_tilde)


def _hyper_values(k):
    if isinstance(k, (Sum, Product)):
        return _hyper_values(k.left) + _hyper_values(k.right)
    return [getattr(k, f) for f in k.__dataclass_fields__]


def gp_condition(xs, f, k, x_new, jitter=DEFAULT_JITTER):
    """Predictive mean and covariance of the latent function at ``x_new``.

    ``mean = K*^T K^-1 f`` and ``cov = K** - K*^T K^-1 K*`` for a zero-mean
    prior; the covariance is symmetrized.
    """
    xs, x_new = _as_grid(xs), _as_grid(x_new)
    f = np.asarray(f, dtype=float)
    if f.shape != xs.shape:
        raise ParameterError("latent values must match the training grid")
    _, L = gram(k, xs, jitter)
    Ks = np.asarray(ad.value_of(k.matrix(xs, x_new)), dtype=float)
    Kss = np.asarray(ad.value_of(k.matrix(x_new, x_new)), dtype=float)
    alpha = sla.cho_solve((L, True), f)
    V = sla.solve_triangular(L, Ks, lower=True)
    mean = Ks.T @ alpha
    cov = Kss - V.T @ V
    return mean, 0.5 * (cov + cov.T)


def sample_conditional(rng, mean, cov, jitter=DEFAULT_JITTER):
    """One draw from ``N(mean, cov)`` for a possibly near-singular ``cov``."""
    cov = 0.5 * (cov + cov.T)
    n = mean.size
    for j in (jitter, 10.0 * jitter, 100.0 * jitter):
        try:
            L = np.linalg.cholesky(cov + j * np.eye(n))
            break
        except np.linalg.LinAlgError:
            continue
    else:
        w, V = np.linalg.eigh(cov)
        L = V * np.sqrt(np.clip(w, 0.0, None))
    return mean + L @ rng.standard_normal(n)
