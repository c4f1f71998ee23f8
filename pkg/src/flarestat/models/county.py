"""Hierarchical county model with correlated intercepts and slopes.

Each county's ``(alpha, beta)`` pair shares a bivariate normal population
with an LKJ(2) prior on its correlation. Counties may be parameterized
centered, noncentered (``mu + diag(s) L z``), or a mix of both.
"""

from __future__ import annotations

import numpy as np

from .. import distributions as D
from ..errors import ValidationError
from ..ppl import CholeskyCorr, LogDensityProgram, ParamSpec, positive, real
from ..ppl import tape as ad
from ..sampler import SamplerConfig, nuts_sample
from .records import CountyRegistry

PARAMETERIZATIONS = ("centered", "noncentered", "mixed")
LKJ = D.LKJCorr(2.0, 2)


def _arrays(data):
    if isinstance(data, tuple) and len(data) == 3:
        idx, viirs, ndic = data
        idx = np.asarray(idx, dtype=int)
        viirs = np.asarray(viirs, dtype=float)
        ndic = np.asarray(ndic, dtype=float)
    else:
        idx = np.array([r.county for r in data], dtype=int)
        viirs = np.array([r.viirs_bcm for r in data], dtype=float)
        ndic = np.array([r.ndic_bcm for r in data], dtype=float)
    return idx, viirs, ndic


def _resolve_centered(parameterization, n_counties, centered):
    if parameterization not in PARAMETERIZATIONS:
        raise ValidationError(f"parameterization must be one of {PARAMETERIZATIONS}")
    if parameterization == "centered":
        return np.ones(n_counties, dtype=bool)
    if parameterization == "noncentered":
        return np.zeros(n_counties, dtype=bool)
    mask = np.zeros(n_counties, dtype=bool)
    if centered is None:
        raise ValidationError("mixed parameterization needs the set of centered counties")
    mask[list(centered)] = True
    return mask


def county_program(idx, viirs, ndic, n_counties, parameterization="noncentered", centered=None):
    """Log-posterior of the county model.

    ``centered`` lists county indices that use the centered form when
    ``parameterization="mixed"``.
    """
    mask = _resolve_centered(parameterization, n_counties, centered)
    c_idx = np.flatnonzero(mask)
    n_idx = np.flatnonzero(~mask)
    # position of each county inside the concatenation [centered, noncentered]
    order = np.empty(n_counties, dtype=int)
    order[np.concatenate([c_idx, n_idx])] = np.arange(n_counties)

    params = [
        ParamSpec("mu_alpha", (), positive),
        ParamSpec("mu_beta", (), positive),
        ParamSpec("sigma_alpha", (), positive),
        ParamSpec("sigma_beta", (), positive),
        ParamSpec("sigma", (), positive),
        ParamSpec("L_corr", (2, 2), CholeskyCorr(2)),
    ]
    if c_idx.size:
        params.append(ParamSpec("ab_centered", (c_idx.size, 2), real))
    if n_idx.size:
        params.append(ParamSpec("z", (n_idx.size, 2), real))

    def county_effects(v):
        mu = ad.stack([v["mu_alpha"], v["mu_beta"]])
        scale = ad.reshape(ad.stack([v["sigma_alpha"], v["sigma_beta"]]), (2, 1))
        L_cov = scale * v["L_corr"]
        blocks = []
        if c_idx.size:
            blocks.append(v["ab_centered"])
        if n_idx.size:
            blocks.append(mu + ad.matmul(v["z"], L_cov.T))
        ab = blocks[0] if len(blocks) == 1 else ad.concatenate(blocks, axis=0)
        return ad.take(ab, order, axis=0), mu, L_cov

    def loglik(v):
        ab, _, _ = county_effects(v)
        alpha = ad.take(ab[:, 0], idx)
        beta = ad.take(ab[:, 1], idx)
        return D.Normal(alpha + beta * viirs, v["sigma"]).logpdf(ndic)

    def log_prob(v):
        ab, mu, L_cov = county_effects(v)
        lp = (
            D.HalfNormal(0.1).logpdf(v["mu_alpha"])
            + D.Gamma(2.0, 2.0).logpdf(v["mu_beta"])
            + D.HalfNormal(0.1).logpdf(v["sigma_alpha"])
            + D.HalfNormal(0.1).logpdf(v["sigma_beta"])
            + D.HalfNormal(0.05).logpdf(v["sigma"])
            + LKJ.logpdf_cholesky(v["L_corr"])
        )
        if c_idx.size:
            lp = lp + ad.sum(D.MVNormal(mu, chol=L_cov).logpdf(v["ab_centered"]))
        if n_idx.size:
            lp = lp + ad.sum(D.Normal(0.0, 1.0).logpdf(v["z"]))
        return lp + ad.sum(loglik(v))

    def deterministics(v):
        ab, _, _ = county_effects(v)
        return {"alpha_county": ab[:, 0], "beta_county": ab[:, 1], "rho": v["L_corr"][1, 0]}

    init = {"mu_alpha": 0.05, "mu_beta": 1.0, "sigma_alpha": 0.05, "sigma_beta": 0.05, "sigma": 0.05}
    if c_idx.size:
        init["ab_centered"] = np.tile([0.05, 1.0], (c_idx.size, 1))
    return LogDensityProgram(
        params, log_prob, pointwise_loglik=loglik, deterministics=deterministics, init=init, name=f"county_{parameterization}"
    )


def fit_county_hierarchical(data, parameterization="noncentered", cfg=None, *, registry=None, centered=None, n_counties=None):
    """Posterior of the county model.

    ``data`` is a sequence of :class:`CountyMonthly` or an
    ``(county_index, viirs, ndic)`` triple. The number of counties defaults
    to the registry size when every registry county has data, otherwise to
    the highest index seen plus one.
    """
    cfg = cfg or SamplerConfig()
    registry = registry or CountyRegistry()
    idx, viirs, ndic = _arrays(data)
    if idx.size == 0:
        raise ValidationError("no county observations")
    if np.any(idx < 0) or np.any(idx >= len(registry)):
        raise ValidationError("county index outside the registered county table")
    n = int(n_counties or idx.max() + 1)
    if np.unique(idx).size < 2:
        raise ValidationError("the hierarchical model needs at least 2 counties")
    trace = nuts_sample(county_program(idx, viirs, ndic, n, parameterization, centered), cfg)
    trace.meta.update(kind="county", counties=[registry.label_of(i) for i in range(n)], idx=idx, viirs=viirs, ndic=ndic)
    return trace


def no_pool_estimates(idx, viirs, ndic, n_counties):
    """Per-county least-squares ``(alpha, beta)``; NaN where a county has < 2 points."""
    out = np.full((n_counties, 2), np.nan)
    for c in range(n_counties):
        m = idx == c
        if m.sum() < 2 or np.ptp(viirs[m]) == 0:
            continue
        A = np.column_stack([np.ones(m.sum()), viirs[m]])
        out[c] = np.linalg.lstsq(A, ndic[m], rcond=None)[0]
    return out
