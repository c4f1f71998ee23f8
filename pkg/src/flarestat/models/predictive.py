"""Posterior predictive simulation through each observation model."""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .gpseries import KINDS as GP_KINDS
from .gpseries import LATENT_NAME, MCF_PER_BOE


def posterior_predictive(trace, kind=None, n_datasets=100, data=None, seed=0):
    """Simulated datasets, one per randomly chosen posterior draw.

    ``data`` supplies covariates the observation model needs (for example
    the VIIRS series or the monthly well counts) and defaults to what the
    fitting function stored on ``trace.meta``. Returns an array of shape
    ``(n_datasets, n_obs)``.
    """
    kind = kind or trace.meta.get("kind")
    data = data if data is not None else trace.meta
    if n_datasets < 1:
        raise ValidationError("n_datasets must be at least 1")
    rng = np.random.default_rng(seed)
    total = trace.chains * trace.draws
    picks = rng.choice(total, size=n_datasets, replace=n_datasets > total)
    draw = lambda name: trace.flat(name)[picks]  # noqa: E731

    if kind == "state":
        viirs = np.asarray(_get(data, "viirs"), dtype=float)
        mu = draw("alpha")[:, None] + draw("beta")[:, None] * viirs
        return mu + draw("sigma")[:, None] * rng.standard_normal(mu.shape)
    if kind == "county":
        idx = np.asarray(_get(data, "idx"), dtype=int)
        viirs = np.asarray(_get(data, "viirs"), dtype=float)
        mu = draw("alpha_county")[:, idx] + draw("beta_county")[:, idx] * viirs
        return mu + draw("sigma")[:, None] * rng.standard_normal(mu.shape)
    if kind == "negbin":
        n_obs = np.asarray(_get(data, "counts")).size
        mu, phi = draw("mu")[:, None], draw("phi")[:, None]
        rate = rng.standard_gamma(np.broadcast_to(phi, (n_datasets, n_obs))) * (mu / phi)
        return rng.poisson(rate).astype(float)
    if kind == "gmm":
        n_obs = np.asarray(_get(data, "x")).size
        w, mu, sd = draw("w"), draw("mu"), draw("sigma")
        out = np.empty((n_datasets, n_obs))
        for i in range(n_datasets):
            z = rng.choice(w.shape[1], size=n_obs, p=w[i] / w[i].sum())
            out[i] = mu[i, z] + sd[i, z] * rng.standard_normal(n_obs)
        return out
    if kind in GP_KINDS:
        latent = draw(LATENT_NAME[kind])
        if kind == "well_proportion":
            wells = np.asarray(_get(data, "wells"), dtype=np.int64)
            return rng.binomial(wells, latent).astype(float)
        if kind == "detection_count":
            if "phi" in trace:
                phi = draw("phi")[:, None]
                rate = rng.standard_gamma(np.broadcast_to(phi, latent.shape)) * (latent / phi)
                return rng.poisson(rate).astype(float)
            return rng.poisson(latent).astype(float)
        nu, s2 = draw("nu")[:, None], draw("s2")[:, None]
        scale = np.sqrt(s2)
        t = rng.standard_t(np.broadcast_to(nu, latent.shape))
        if kind == "gas_proportion":
            return latent * np.asarray(_get(data, "gas"), dtype=float) + scale * t
        if kind == "boe_proportion":
            # simulated on the flared-volume scale, F = c E
            return MCF_PER_BOE * (latent * np.asarray(_get(data, "oil"), dtype=float) + scale * t)
        return latent * np.asarray(_get(data, "viirs"), dtype=float) + scale * t
    raise ValidationError(f"no predictive simulator for model kind {kind!r}")


def _get(data, name):
    value = data.get(name) if isinstance(data, dict) else getattr(data, name, None)
    if value is None:
        raise ValidationError(f"posterior predictive simulation needs {name!r}")
    return value
