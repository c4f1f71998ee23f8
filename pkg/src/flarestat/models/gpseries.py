"""Latent Gaussian-process models for monthly flaring series.

All kinds share a zero-mean GP over month indices, written in noncentered
form ``f = L f_tilde``, and differ in link and observation model:

==================  =========  ===============================================
kind                link       observation
==================  =========  ===============================================
gas_proportion      logistic   flared ~ StudentT(nu, pi * gas, 1 / s2)
well_proportion     logistic   flaring_wells ~ Binomial(wells, p)
detection_count     exp        detections ~ Poisson(lam) (or NegBinomial)
boe_proportion      logistic   flared / 6 ~ StudentT(nu, pi * oil, 1 / s2)
scale_factor        exp        ndic ~ StudentT(nu, beta * viirs, 1 / s2)
==================  =========  ===============================================
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .. import distributions as D
from .. import gp
from ..errors import ValidationError
from ..ppl import LogDensityProgram, ParamSpec, positive, real
from ..ppl import tape as ad
from ..sampler import SamplerConfig, nuts_sample
from .records import SERIES_FIELDS

MCF_PER_BOE = 6.0
SCALE_FACTOR_DELTA = 1e-6

KINDS = ("gas_proportion", "well_proportion", "detection_count", "boe_proportion", "scale_factor")
LATENT_NAME = {
    "gas_proportion": "pi",
    "well_proportion": "p",
    "detection_count": "lam",
    "boe_proportion": "pi",
    "scale_factor": "beta",
}
REQUIRED = {
    "gas_proportion": ("flared", "gas"),
    "well_proportion": ("wells", "flaring_wells"),
    "detection_count": ("detections",),
    "boe_proportion": ("flared", "oil"),
    "scale_factor": ("viirs", "ndic"),
}


def _check_kind(kind):
    if kind not in KINDS:
        raise ValidationError(f"unknown GP model kind {kind!r}; expected one of {KINDS}")


def link(kind, f):
    """Map latent values to the kind's natural scale (numeric)."""
    _check_kind(kind)
    f = np.asarray(f, dtype=float)
    if kind in ("detection_count", "scale_factor"):
        return np.exp(f)
    return special.expit(f)


def kernel_for(kind, values):
    """Kernel expression for ``kind`` from a dict of hyperparameter values."""
    if kind == "scale_factor":
        return (
            gp.Matern52(values["ell_mat"], values["eta_mat"])
            + gp.Periodic(values["period"], values["ell_per"], values["eta_per"])
            + gp.WhiteNoise(SCALE_FACTOR_DELTA)
        )
    return gp.Matern52(values["ell"], values["eta"])


def _hyper_specs(kind, negbin):
    if kind == "scale_factor":
        specs = [
            ParamSpec("ell_mat", (), positive),
            ParamSpec("eta_mat", (), positive),
            ParamSpec("period", (), positive),
            ParamSpec("ell_per", (), positive),
            ParamSpec("eta_per", (), positive),
        ]
    else:
        specs = [ParamSpec("ell", (), positive), ParamSpec("eta", (), positive)]
    if kind in ("gas_proportion", "boe_proportion", "scale_factor"):
        specs += [ParamSpec("nu", (), positive), ParamSpec("s2", (), positive)]
    if kind == "detection_count" and negbin:
        specs.append(ParamSpec("phi", (), positive))
    return specs


def _hyper_prior(kind, v):
    if kind == "scale_factor":
        lp = (
            D.Gamma(8.0, 2.0).logpdf(v["ell_mat"])
            + D.HalfCauchy(5.0).logpdf(v["eta_mat"])
            + D.Normal(12.0, 1.0).logpdf(v["period"])
            + D.Gamma(4.0, 3.0).logpdf(v["ell_per"])
            + D.HalfCauchy(5.0).logpdf(v["eta_per"])
        )
    else:
        lp = D.Gamma(2.0, 1.0).logpdf(v["ell"]) + D.HalfCauchy(5.0).logpdf(v["eta"])
    if "nu" in v:
        lp = lp + D.Gamma(2.0, 0.1).logpdf(v["nu"]) + D.HalfCauchy(5.0).logpdf(v["s2"])
    if "phi" in v:
        lp = lp + D.Exponential(1.0).logpdf(v["phi"])
    return lp


def _observation(kind, series, f, v):
    """Pointwise log-likelihood of the observations given latent ``f``."""
    if kind == "gas_proportion":
        mu = ad.sigmoid(f) * series.gas
        return D.StudentT(v["nu"], mu, 1.0 / v["s2"]).logpdf(series.flared)
    if kind == "boe_proportion":
        mu = ad.sigmoid(f) * series.oil
        return D.StudentT(v["nu"], mu, 1.0 / v["s2"]).logpdf(series.flared / MCF_PER_BOE)
    if kind == "well_proportion":
        return D.Binomial(series.wells, logit=f).logpdf(series.flaring_wells)
    if kind == "detection_count":
        if "phi" in v:
            return D.NegBinomial(ad.exp(f), v["phi"]).logpdf(series.detections)
        return D.Poisson(log_rate=f).logpdf(series.detections)
    mu = ad.exp(f) * series.viirs
    return D.StudentT(v["nu"], mu, 1.0 / v["s2"]).logpdf(series.ndic)


def gp_series_program(series, kind, negbin=False, jitter=gp.DEFAULT_JITTER):
    """Log-posterior for a GP series model over hyperparameters and ``f_tilde``."""
    _check_kind(kind)
    series.require(kind, *REQUIRED[kind])
    if negbin and kind != "detection_count":
        raise ValidationError("the negative-binomial swap applies to detection_count only")
    n = len(series)
    if n < 2:
        raise ValidationError("GP series models need at least 2 months")
    xs = series.x
    specs = _hyper_specs(kind, negbin) + [ParamSpec("f_tilde", (n,), real)]

    def latent(v):
        return gp.latent_noncentered(kernel_for(kind, v), xs, v["f_tilde"], jitter)

    def loglik(v):
        return _observation(kind, series, latent(v), v)

    def log_prob(v):
        return _hyper_prior(kind, v) + ad.sum(D.Normal(0.0, 1.0).logpdf(v["f_tilde"])) + ad.sum(loglik(v))

    def deterministics(v):
        return {LATENT_NAME[kind]: link(kind, latent(v))}

    init = {"period": 12.0} if kind == "scale_factor" else {}
    return LogDensityProgram(
        specs, log_prob, pointwise_loglik=loglik, deterministics=deterministics, init=init, name=f"gp_{kind}"
    )


def fit_gp_series(series, kind, cfg=None, negbin=False, jitter=gp.DEFAULT_JITTER):
    """Full-Bayes fit of a GP series model; hyperparameters are sampled, not optimized."""
    cfg = cfg or SamplerConfig()
    trace = nuts_sample(gp_series_program(series, kind, negbin, jitter), cfg)
    trace.meta.update({f: getattr(series, f) for f in SERIES_FIELDS if getattr(series, f) is not None})
    trace.meta.update(kind=kind, x=np.asarray(series.x, dtype=float), negbin=negbin, jitter=jitter)
    return trace


def _draw_values(trace, names, s):
    return {k: trace.flat(k)[s] for k in names}


def forecast_latent(trace, kind, horizon=6, xs=None, seed=0, jitter=gp.DEFAULT_JITTER, max_draws=None):
    """Posterior predictive latent samples beyond the training grid.

    For each posterior draw the latent training values are rebuilt from
    ``f_tilde``, conditioned on with :func:`flarestat.gp.gp_condition`, and a
    sample on the horizon grid is passed through the kind's link.

    Returns ``(grid, samples)`` with ``samples`` of shape ``(draws, horizon)``.
    ``horizon`` may also be an explicit array of month indices.
    """
    _check_kind(kind)
    if xs is None:
        xs = trace.meta.get("x")
    n = trace.shape_of("f_tilde")[0]
    xs = np.arange(n, dtype=float) if xs is None else np.asarray(xs, dtype=float)
    if np.ndim(horizon) == 0:
        if int(horizon) <= 0:
            raise ValidationError("forecast horizon must be positive")
        grid = xs[-1] + np.arange(1, int(horizon) + 1, dtype=float)
    else:
        grid = np.asarray(horizon, dtype=float)
        if grid.size == 0:
            raise ValidationError("forecast horizon must be positive")
    names = [p.name for p in _hyper_specs(kind, "phi" in trace)]
    ft = trace.flat("f_tilde")
    total = ft.shape[0]
    take = np.arange(total) if max_draws is None or max_draws >= total else np.linspace(0, total - 1, max_draws).astype(int)
    rng = np.random.default_rng(seed)
    out = np.empty((take.size, grid.size))
    for row, s in enumerate(take):
        k = kernel_for(kind, _draw_values(trace, names, s))
        _, L = gp.gram(k, xs, jitter)
        f = L @ ft[s]
        mean, cov = gp.gp_condition(xs, f, k, grid, jitter)
        out[row] = gp.sample_conditional(rng, mean, cov)
    return grid, link(kind, out)


def gas_capture_from_proportion(pi):
    """Captured share of gas, ``1 - pi``."""
    pi = np.asarray(pi, dtype=float)
    if np.any((pi < 0) | (pi > 1)):
        raise ValidationError("flared proportion must lie in [0, 1]")
    out = 1.0 - pi
    return float(out) if out.ndim == 0 else out
