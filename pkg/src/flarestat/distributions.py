"""Probability distributions: log-densities, sampling and moments.

Log-densities are written with the polymorphic operations of
:mod:`flarestat.ppl.tape`, so parameters may be tape variables during
gradient evaluation. Parameter validation only runs on plain numbers.
Observed values outside the support give ``-inf``; invalid parameters raise
:class:`~flarestat.errors.ParameterError`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ParameterError
from .ppl import tape as ad

LOG_2PI = math.log(2.0 * math.pi)


def _numeric(*xs):
    return all(not ad.is_var(x) for x in xs)


def _require(cond, msg):
    if not np.all(cond):
        raise ParameterError(msg)


def _support_penalty(mask):
    """0 where ``mask`` holds and -inf elsewhere."""
    return np.where(mask, 0.0, -np.inf)


def _v(x):
    return np.asarray(ad.value_of(x), dtype=float)


def _positive_support(x, strict=False):
    """Values safe to evaluate on, plus the -inf penalty outside the support."""
    xv = _v(x)
    if ad.is_var(x):
        return xv, 0.0
    ok = xv > 0 if strict else xv >= 0
    return np.where(ok, xv, 1.0), _support_penalty(ok)


class Dist:
    """Base class; subclasses implement ``logpdf`` and ``sample``."""

    def logpdf(self, x):
        raise NotImplementedError

    def sample(self, rng, n):
        raise NotImplementedError


@dataclass(frozen=True)
class Normal(Dist):
    mu: object = 0.0
    sigma: object = 1.0

    def __post_init__(self):
        if _numeric(self.sigma):
            _require(np.asarray(self.sigma) > 0, "Normal: sigma must be positive")

    def logpdf(self, x):
        xv, mv, sv = _v(x), _v(self.mu), _v(self.sigma)
        z = (xv - mv) / sv
        val = -0.5 * LOG_2PI - np.log(sv) - 0.5 * z * z
        return ad.fused(
            val,
            [(x, lambda: -z / sv), (self.mu, lambda: z / sv), (self.sigma, lambda: (z * z - 1.0) / sv)],
        )

    def sample(self, rng, n):
        u = rng.random(_shape(n, self.mu, self.sigma))
        return ad.value_of(self.mu) + ad.value_of(self.sigma) * special.ndtri(u)

    def cdf(self, x):
        return special.ndtr((np.asarray(x) - self.mu) / self.sigma)


@dataclass(frozen=True)
class HalfNormal(Dist):
    """Normal(0, sigma) folded onto [0, inf)."""

    sigma: object = 1.0

    def __post_init__(self):
        if _numeric(self.sigma):
            _require(np.asarray(self.sigma) > 0, "HalfNormal: sigma must be positive")

    def logpdf(self, x):
        xv, pen = _positive_support(x)
        sv = _v(self.sigma)
        z = xv / sv
        val = math.log(2.0) - 0.5 * LOG_2PI - np.log(sv) - 0.5 * z * z + pen
        return ad.fused(val, [(x, lambda: -z / sv), (self.sigma, lambda: (z * z - 1.0) / sv)])

    def sample(self, rng, n):
        u = rng.random(_shape(n, self.sigma))
        return ad.value_of(self.sigma) * special.ndtri(0.5 + 0.5 * u)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, special.erf(np.maximum(x, 0) / (self.sigma * math.sqrt(2.0))), 0.0)

    def mean(self):
        return self.sigma * math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class HalfCauchy(Dist):
    """Cauchy(0, gamma) folded onto [0, inf)."""

    gamma: object = 1.0

    def __post_init__(self):
        if _numeric(self.gamma):
            _require(np.asarray(self.gamma) > 0, "HalfCauchy: gamma must be positive")

    def logpdf(self, x):
        xv, pen = _positive_support(x)
        gv = _v(self.gamma)
        z = xv / gv
        val = math.log(2.0 / math.pi) - np.log(gv) - np.log1p(z * z) + pen
        return ad.fused(
            val,
            [(x, lambda: -2.0 * z / (gv * (1.0 + z * z))), (self.gamma, lambda: (z * z - 1.0) / (gv * (1.0 + z * z)))],
        )

    def sample(self, rng, n):
        u = rng.random(_shape(n, self.gamma))
        return ad.value_of(self.gamma) * np.tan(0.5 * math.pi * u)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, 2.0 / math.pi * np.arctan(np.maximum(x, 0) / self.gamma), 0.0)


@dataclass(frozen=True)
class Gamma(Dist):
    """Shape-rate parameterization: mean ``alpha / beta``."""

    alpha: object = 1.0
    beta: object = 1.0

    def __post_init__(self):
        if _numeric(self.alpha, self.beta):
            _require((np.asarray(self.alpha) > 0) & (np.asarray(self.beta) > 0), "Gamma: alpha and beta must be positive")

    def logpdf(self, x):
        xv, pen = _positive_support(x, strict=True)
        a, b = _v(self.alpha), _v(self.beta)
        val = a * np.log(b) - special.gammaln(a) + (a - 1.0) * np.log(xv) - b * xv + pen
        return ad.fused(
            val,
            [
                (x, lambda: (a - 1.0) / xv - b),
                (self.alpha, lambda: np.log(b) - special.digamma(a) + np.log(xv)),
                (self.beta, lambda: a / b - xv),
            ],
        )

    def sample(self, rng, n):
        a, b = ad.value_of(self.alpha), ad.value_of(self.beta)
        return rng.standard_gamma(a, size=_shape(n, a, b)) / b

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return special.gammainc(self.alpha, self.beta * x)

    def mean(self):
        return self.alpha / self.beta


@dataclass(frozen=True)
class Exponential(Dist):
    lam: object = 1.0

    def __post_init__(self):
        if _numeric(self.lam):
            _require(np.asarray(self.lam) > 0, "Exponential: rate must be positive")

    def logpdf(self, x):
        xv, pen = _positive_support(x)
        lv = _v(self.lam)
        val = np.log(lv) - lv * xv + pen
        return ad.fused(val, [(x, lambda: -lv * np.ones_like(xv)), (self.lam, lambda: 1.0 / lv - xv)])

    def sample(self, rng, n):
        u = rng.random(_shape(n, self.lam))
        return -np.log1p(-u) / ad.value_of(self.lam)

    def cdf(self, x):
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        return -np.expm1(-self.lam * x)


@dataclass(frozen=True)
class StudentT(Dist):
    """Student-t with a precision-like third parameter.

    ``lam`` plays the role of a Gaussian precision: the density's scale is
    ``lam ** -0.5``. Use :meth:`from_scale` to build from a scale instead.
    """

    nu: object = 1.0
    mu: object = 0.0
    lam: object = 1.0

    def __post_init__(self):
        if _numeric(self.nu, self.lam):
            _require((np.asarray(self.nu) > 0) & (np.asarray(self.lam) > 0), "StudentT: nu and lam must be positive")

    @classmethod
    def from_scale(cls, nu, mu, sigma):
        return cls(nu, mu, 1.0 / (sigma * sigma))

    @property
    def scale(self):
        return self.lam**-0.5

    def logpdf(self, x):
        nu, lam = _v(self.nu), _v(self.lam)
        d = _v(x) - _v(self.mu)
        q = lam * d * d / nu
        val = (
            special.gammaln(0.5 * (nu + 1.0))
            - special.gammaln(0.5 * nu)
            - 0.5 * np.log(nu * math.pi)
            + 0.5 * np.log(lam)
            - 0.5 * (nu + 1.0) * np.log1p(q)
        )
        dx = lambda: -(nu + 1.0) * lam * d / (nu + lam * d * d)  # noqa: E731
        return ad.fused(
            val,
            [
                (x, dx),
                (self.mu, lambda: -dx()),
                (self.lam, lambda: 0.5 / lam - 0.5 * (nu + 1.0) * d * d / (nu + lam * d * d)),
                (
                    self.nu,
                    lambda: 0.5 * (special.digamma(0.5 * (nu + 1.0)) - special.digamma(0.5 * nu) - 1.0 / nu - np.log1p(q))
                    + 0.5 * (nu + 1.0) * q / (nu * (1.0 + q)),
                ),
            ],
        )

    def sample(self, rng, n):
        nu, mu, lam = (ad.value_of(v) for v in (self.nu, self.mu, self.lam))
        return mu + rng.standard_t(nu, size=_shape(n, nu, mu, lam)) / np.sqrt(lam)

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) * math.sqrt(self.lam)
        return special.stdtr(self.nu, z)


@dataclass(frozen=True)
class Uniform(Dist):
    a: object = 0.0
    b: object = 1.0

    def __post_init__(self):
        if _numeric(self.a, self.b):
            _require(np.asarray(self.b) > np.asarray(self.a), "Uniform: need a < b")

    def logpdf(self, x):
        xv = np.asarray(ad.value_of(x))
        pen = _support_penalty((xv >= ad.value_of(self.a)) & (xv <= ad.value_of(self.b)))
        return -ad.log(self.b - self.a) + pen

    def sample(self, rng, n):
        a, b = ad.value_of(self.a), ad.value_of(self.b)
        return a + (b - a) * rng.random(_shape(n, a, b))

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)


def _count_support(x):
    xv = np.asarray(x, dtype=float)
    ok = (xv >= 0) & (xv == np.floor(xv))
    return np.where(ok, xv, 0.0), _support_penalty(ok)


@dataclass(frozen=True)
class Poisson(Dist):
    """Poisson with rate ``lam``, or with ``log_rate`` for a log link."""

    lam: object = None
    log_rate: object = None

    def __post_init__(self):
        if (self.lam is None) == (self.log_rate is None):
            raise ParameterError("Poisson: give exactly one of lam, log_rate")
        if self.lam is not None and _numeric(self.lam):
            _require(np.asarray(self.lam) > 0, "Poisson: rate must be positive")

    def logpdf(self, x):
        k, pen = _count_support(x)
        if self.log_rate is not None:
            f = _v(self.log_rate)
            rate = np.exp(f)
            val = k * f - rate - special.gammaln(k + 1.0) + pen
            return ad.fused(val, [(self.log_rate, lambda: k - rate)])
        lam = _v(self.lam)
        val = special.xlogy(k, lam) - lam - special.gammaln(k + 1.0) + pen
        return ad.fused(val, [(self.lam, lambda: k / lam - 1.0)])

    def rate(self):
        return np.exp(ad.value_of(self.log_rate)) if self.lam is None else ad.value_of(self.lam)

    def sample(self, rng, n):
        lam = self.rate()
        return rng.poisson(lam, size=_shape(n, lam)).astype(float)


@dataclass(frozen=True)
class Binomial(Dist):
    """Binomial with success probability ``p``, or ``logit`` for a logit link."""

    n: object = 1
    p: object = None
    logit: object = None

    def __post_init__(self):
        if (self.p is None) == (self.logit is None):
            raise ParameterError("Binomial: give exactly one of p, logit")
        _require(np.asarray(self.n) >= 0, "Binomial: n must be non-negative")
        if self.p is not None and _numeric(self.p):
            p = np.asarray(self.p)
            _require((p >= 0) & (p <= 1), "Binomial: p must lie in [0, 1]")

    def logpdf(self, x):
        nt = np.asarray(self.n, dtype=float)
        xv = np.asarray(x, dtype=float)
        ok = (xv >= 0) & (xv <= nt) & (xv == np.floor(xv))
        k = np.where(ok, xv, 0.0)
        pen = _support_penalty(ok)
        log_choose = special.gammaln(nt + 1.0) - special.gammaln(k + 1.0) - special.gammaln(nt - k + 1.0)
        if self.logit is not None:
            f = _v(self.logit)
            val = log_choose - k * np.logaddexp(0.0, -f) - (nt - k) * np.logaddexp(0.0, f) + pen
            return ad.fused(val, [(self.logit, lambda: k - nt * special.expit(f))])
        p = _v(self.p)
        val = log_choose + special.xlogy(k, p) + special.xlog1py(nt - k, -p) + pen
        return ad.fused(val, [(self.p, lambda: k / p - (nt - k) / (1.0 - p))])

    def prob(self):
        return special.expit(ad.value_of(self.logit)) if self.p is None else ad.value_of(self.p)

    def sample(self, rng, n):
        p = self.prob()
        return rng.binomial(np.asarray(self.n, dtype=np.int64), p, size=_shape(n, self.n, p)).astype(float)


@dataclass(frozen=True)
class NegBinomial(Dist):
    """Mean-overdispersion parameterization: mean ``mu``, variance ``mu + mu^2/phi``."""

    mu: object = 1.0
    phi: object = 1.0

    def __post_init__(self):
        if _numeric(self.mu, self.phi):
            _require((np.asarray(self.mu) > 0) & (np.asarray(self.phi) > 0), "NegBinomial: mu and phi must be positive")

    def logpdf(self, x):
        k, pen = _count_support(x)
        mu, phi = _v(self.mu), _v(self.phi)
        log_mp = np.log(mu + phi)
        val = (
            special.gammaln(phi + k)
            - special.gammaln(k + 1.0)
            - special.gammaln(phi)
            + k * (np.log(mu) - log_mp)
            + phi * (np.log(phi) - log_mp)
            + pen
        )
        return ad.fused(
            val,
            [
                (self.mu, lambda: k / mu - (k + phi) / (mu + phi)),
                (
                    self.phi,
                    lambda: special.digamma(phi + k) - special.digamma(phi) + np.log(phi) - log_mp + 1.0 - (k + phi) / (mu + phi),
                ),
            ],
        )

    def sample(self, rng, n):
        mu, phi = ad.value_of(self.mu), ad.value_of(self.phi)
        shape = _shape(n, mu, phi)
        rate = rng.standard_gamma(phi, size=shape) * (mu / phi)
        return rng.poisson(rate).astype(float)

    def moments(self):
        return negbin_moments(self.mu, self.phi)


@dataclass(frozen=True)
class Dirichlet(Dist):
    alpha: object = field(default_factory=lambda: np.ones(2))

    def __post_init__(self):
        if _numeric(self.alpha):
            a = np.asarray(self.alpha, dtype=float)
            _require(a.ndim == 1 and a.size >= 1, "Dirichlet: alpha must be a vector")
            _require(a > 0, "Dirichlet: alpha must be elementwise positive")

    def logpdf(self, x):
        a = self.alpha
        norm = ad.gammaln(ad.sum(a)) - ad.sum(ad.gammaln(a))
        if not ad.is_var(x):
            xv = np.asarray(x, dtype=float)
            if np.any(xv < 0) or abs(xv.sum(axis=-1).max() - 1.0) > 1e-8:
                return -np.inf
        return norm + ad.sum((a - 1.0) * ad.log(x), axis=-1)

    def sample(self, rng, n):
        a = np.asarray(ad.value_of(self.alpha), dtype=float)
        g = rng.standard_gamma(a, size=(int(n), a.size))
        return g / g.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class MVNormal(Dist):
    """Multivariate normal given ``cov`` or its lower Cholesky factor ``chol``."""

    mu: object = None
    cov: object = None
    chol: object = None

    def __post_init__(self):
        if (self.cov is None) == (self.chol is None):
            raise ParameterError("MVNormal: give exactly one of cov, chol")

    def cholesky(self):
        if self.chol is not None:
            return self.chol
        if _numeric(self.cov):
            try:
                return np.linalg.cholesky(np.asarray(self.cov, dtype=float))
            except np.linalg.LinAlgError:
                raise ParameterError("MVNormal: covariance is not positive definite") from None
        return ad.cholesky(self.cov)

    def logpdf(self, x):
        """Log-density of one vector, or of each row of a 2-D ``x``."""
        L = self.cholesky()
        d = x - self.mu
        n = ad.value_of(L).shape[0]
        if np.ndim(ad.value_of(d)) == 1:
            z = ad.solve_triangular(L, d)
            quad = ad.sum(ad.square(z))
        else:
            z = ad.solve_triangular(L, d.T)
            quad = ad.sum(ad.square(z), axis=0)
        return -0.5 * quad - ad.sum(ad.log(ad.diagonal(L))) - 0.5 * n * LOG_2PI

    def sample(self, rng, n):
        L = np.asarray(ad.value_of(self.cholesky()), dtype=float)
        mu = np.asarray(ad.value_of(self.mu), dtype=float)
        z = rng.standard_normal((int(n), L.shape[0]))
        return mu + z @ L.T


@dataclass(frozen=True)
class LKJCorr(Dist):
    """LKJ distribution over K x K correlation matrices, density up to a constant."""

    eta: object = 1.0
    k: int = 2

    def __post_init__(self):
        if _numeric(self.eta):
            _require(np.asarray(self.eta) > 0, "LKJCorr: eta must be positive")
        if self.k < 1:
            raise ParameterError("LKJCorr: dimension must be at least 1")

    def logpdf(self, x):
        return lkj_logdensity(x, self.eta)

    def logpdf_cholesky(self, L):
        """Log-density of ``R = L L^T`` expressed on its Cholesky factor.

        Includes the Jacobian of ``L -> R`` so that ``L`` itself can be the
        sampled quantity.
        """
        k = self.k
        diag = ad.diagonal(L)
        coef = np.array([k - i - 1 for i in range(1, k)], dtype=float) + 2.0 * self.eta - 2.0
        if k == 1:
            return 0.0
        return ad.sum(coef * ad.log(diag[1:]))

    def sample(self, rng, n):
        """Correlation matrices by the onion construction."""
        eta = float(ad.value_of(self.eta))
        k = self.k
        out = np.empty((int(n), k, k))
        for s in range(int(n)):
            out[s] = _onion(rng, k, eta)
        return out


def _onion(rng, k, eta):
    if k == 1:
        return np.ones((1, 1))
    beta = eta + (k - 2) / 2.0
    r12 = 2.0 * rng.beta(beta, beta) - 1.0
    R = np.array([[1.0, r12], [r12, 1.0]])
    for m in range(2, k):
        beta -= 0.5
        y = rng.beta(m / 2.0, beta)
        u = rng.standard_normal(m)
        u /= np.linalg.norm(u)
        w = math.sqrt(y) * u
        A = np.linalg.cholesky(R)
        z = A @ w
        R = np.block([[R, z[:, None]], [z[None, :], np.ones((1, 1))]])
    return R


def lkj_logdensity(L_or_R, eta):
    """``(eta - 1) * log det R`` for a correlation matrix or its Cholesky factor.

    A symmetric argument is read as ``R`` itself; a lower-triangular one as
    its Cholesky factor.
    """
    M = np.asarray(ad.value_of(L_or_R), dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError("LKJ: expected a square matrix")
    if _numeric(eta) and not eta > 0:
        raise ParameterError("LKJ: eta must be positive")
    lower = not np.any(np.abs(np.triu(M, 1)) > 1e-12)
    if lower and not np.allclose(M, M.T, atol=1e-12):
        if np.any(np.abs(np.sum(M * M, axis=1) - 1.0) > 1e-10):
            raise ParameterError("LKJ: Cholesky factor rows must have unit norm")
        L = L_or_R
    elif np.allclose(M, M.T, atol=1e-12):
        if np.any(np.abs(np.diag(M) - 1.0) > 1e-10):
            raise ParameterError("LKJ: correlation matrix must have a unit diagonal")
        if not ad.is_var(L_or_R):
            try:
                L = np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                return -np.inf
            return (eta - 1.0) * 2.0 * float(np.sum(np.log(np.diag(L))))
        L = ad.cholesky(L_or_R)
    else:
        raise ParameterError("LKJ: expected a symmetric R or a lower-triangular factor")
    return (eta - 1.0) * 2.0 * ad.sum(ad.log(ad.diagonal(L)))


def negbin_moments(mu, phi):
    """Mean and variance of NegBinomial(mu, phi)."""
    if not (mu > 0 and phi > 0):
        raise ParameterError("negbin_moments: mu and phi must be positive")
    if math.isinf(phi):
        return float(mu), float(mu)
    return float(mu), float(mu + mu * mu / phi)


def _shape(n, *params):
    base = np.broadcast(*[np.asarray(ad.value_of(p)) for p in params]).shape
    n = int(n)
    if n < 1:
        raise ParameterError("sample size must be at least 1")
    return (n,) + tuple(base)


def logpdf(d, x):
    return d.logpdf(x)


def sample(d, rng, n):
    return d.sample(rng, n)
