"""Gaussian mixtures over log flaring magnitudes.

The component assignment ``z`` is summed out so NUTS only sees continuous
parameters; :func:`latent_joint_logpdf` keeps the assignment form for
checking the marginalization and for responsibilities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from .. import distributions as D
from ..errors import ValidationError
from ..ppl import LogDensityProgram, ParamSpec, Simplex, positive, real
from ..ppl import tape as ad
from ..sampler import SamplerConfig, Trace, nuts_sample

K_RANGE = (1, 7)
DIRICHLET_CONC = 6.0
MU_PRIOR_SD = 2.0
SIGMA_PRIOR_SD = 2.0


def mu_tilde(x, k):
    """``k`` evenly spaced prior centres over ``[min(x), max(x)]``."""
    lo, hi = float(np.min(x)), float(np.max(x))
    if k == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, k)


def marginal_logpdf(x, weights, means, sds):
    """``log sum_k w_k N(x | mu_k, sd_k)`` for each element of ``x``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(weights, dtype=float)
    comp = D.Normal(np.asarray(means, dtype=float), np.asarray(sds, dtype=float)).logpdf(x[..., None])
    with np.errstate(divide="ignore"):
        return special.logsumexp(np.log(w) + comp, axis=-1)


def latent_joint_logpdf(x, z, weights, means, sds):
    """``log p(x, z)`` with explicit assignments ``z`` (0-based)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=int)
    w = np.asarray(weights, dtype=float)
    means, sds = np.asarray(means, dtype=float), np.asarray(sds, dtype=float)
    with np.errstate(divide="ignore"):
        return float(np.sum(np.log(w[z]) + D.Normal(means[z], sds[z]).logpdf(x)))


def gmm_program(x, k):
    x = np.asarray(x, dtype=float)
    centres = mu_tilde(x, k)
    xcol = x[:, None]

    def loglik(v):
        mu = ad.reshape(v["mu"], (1, k))
        sd = ad.reshape(v["sigma"], (1, k))
        comp = D.Normal(mu, sd).logpdf(xcol) + ad.log(v["w"])
        return ad.logsumexp(comp, axis=1)

    def log_prob(v):
        return (
            D.Dirichlet(np.full(k, DIRICHLET_CONC)).logpdf(v["w"])
            + ad.sum(D.Normal(centres, MU_PRIOR_SD).logpdf(v["mu"]))
            + ad.sum(D.HalfNormal(SIGMA_PRIOR_SD).logpdf(v["sigma"]))
            + ad.sum(loglik(v))
        )

    sd0 = max(float(np.std(x)) / k, 0.1)
    return LogDensityProgram(
        [ParamSpec("w", (k,), Simplex(k)), ParamSpec("mu", (k,), real), ParamSpec("sigma", (k,), positive)],
        log_prob,
        pointwise_loglik=loglik,
        init={"w": np.full(k, 1.0 / k), "mu": centres, "sigma": np.full(k, sd0)},
        name=f"gmm_k{k}",
    )


@dataclass(frozen=True)
class MixtureFit:
    """Posterior of a K-component mixture with components ordered by mean."""

    k: int
    weights: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    trace: Trace

    def __post_init__(self):
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-8:
            raise ValidationError("mixture weights must sum to 1")
        if np.any(self.sds <= 0):
            raise ValidationError("component sds must be positive")


def order_components(trace):
    """Relabel each draw so that component means increase."""
    mu = trace.samples["mu"]
    order = np.argsort(mu, axis=-1, kind="stable")
    for name in ("w", "mu", "sigma"):
        trace.samples[name] = np.take_along_axis(trace.samples[name], order, axis=-1)
    return trace


def fit_gmm(x, k, cfg=None, k_range=K_RANGE):
    """Marginalized Gaussian-mixture fit with ``k`` components."""
    x = np.asarray(x, dtype=float).ravel()
    lo, hi = k_range
    if not lo <= k <= hi:
        raise ValidationError(f"K={k} outside the allowed range [{lo}, {hi}]")
    if x.size <= k:
        raise ValidationError("need more observations than components")
    if not np.all(np.isfinite(x)):
        raise ValidationError("magnitudes must be finite")
    trace = order_components(nuts_sample(gmm_program(x, k), cfg or SamplerConfig()))
    trace.meta.update(kind="gmm", k=k, x=x)
    return MixtureFit(
        k,
        trace.posterior_mean("w") / trace.posterior_mean("w").sum(),
        trace.posterior_mean("mu"),
        trace.posterior_mean("sigma"),
        trace,
    )


def responsibilities(fit, x):
    """Posterior component probabilities of ``x`` at posterior-mean parameters.

    ``fit`` is a :class:`MixtureFit` or a ``(weights, means, sds)`` triple.
    Returns an array with a trailing axis of length K.
    """
    if isinstance(fit, MixtureFit):
        w, m, s = fit.weights, fit.means, fit.sds
    else:
        w, m, s = (np.asarray(a, dtype=float) for a in fit)
    x = np.asarray(x, dtype=float)
    comp = D.Normal(m, s).logpdf(x[..., None])
    with np.errstate(divide="ignore"):
        logp = np.log(w) + comp
    return np.exp(logp - special.logsumexp(logp, axis=-1, keepdims=True))
