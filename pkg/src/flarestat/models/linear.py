"""State-level linear calibration of NDIC reports against VIIRS estimates."""

from __future__ import annotations

import logging

import numpy as np

from .. import distributions as D
from ..errors import ValidationError
from ..ppl import LogDensityProgram, ParamSpec, positive
from ..ppl import tape as ad
from ..sampler import SamplerConfig, nuts_sample

log = logging.getLogger(__name__)

SLOPE_UNIDENTIFIED = "slope_unidentified"


def _arrays(data):
    if isinstance(data, tuple) and len(data) == 2:
        viirs, ndic = (np.asarray(a, dtype=float) for a in data)
    else:
        viirs = np.array([r.viirs_bcm for r in data], dtype=float)
        ndic = np.array([r.ndic_bcm for r in data], dtype=float)
    if viirs.shape != ndic.shape or viirs.ndim != 1:
        raise ValidationError("VIIRS and NDIC series must be 1-D and of equal length")
    return viirs, ndic


def state_linear_program(viirs, ndic, prior_only=False):
    """``NDIC ~ N(alpha + beta VIIRS, sigma)`` with weakly informative priors."""
    viirs = np.asarray(viirs, dtype=float)
    ndic = np.asarray(ndic, dtype=float)

    def prior(v):
        return (
            D.HalfNormal(0.2).logpdf(v["alpha"])
            + D.Gamma(2.0, 2.0).logpdf(v["beta"])
            + D.HalfCauchy(0.1).logpdf(v["sigma"])
        )

    def loglik(v):
        mu = v["alpha"] + v["beta"] * viirs
        return D.Normal(mu, v["sigma"]).logpdf(ndic)

    def log_prob(v):
        if prior_only:
            return prior(v)
        return prior(v) + ad.sum(loglik(v))

    params = [ParamSpec("alpha", (), positive), ParamSpec("beta", (), positive), ParamSpec("sigma", (), positive)]
    return LogDensityProgram(
        params,
        log_prob,
        pointwise_loglik=None if prior_only else loglik,
        init={"alpha": 0.1, "beta": 1.0, "sigma": 0.1},
        name="state_linear",
    )


def fit_state_linear(data, cfg=None, prior_only=False):
    """Posterior over ``(alpha, beta, sigma)`` for monthly state volumes.

    ``data`` is a sequence of :class:`StateMonthly` or a ``(viirs, ndic)``
    pair. Identical VIIRS values leave the slope unidentified; the fit still
    runs and ``trace.meta["warnings"]`` records it.
    """
    cfg = cfg or SamplerConfig()
    if prior_only:
        viirs = ndic = np.zeros(0)
    else:
        viirs, ndic = _arrays(data)
        if viirs.size < 3:
            raise ValidationError("state model needs at least 3 months")
    warnings = []
    if viirs.size and np.ptp(viirs) == 0.0:
        log.warning("all VIIRS values are identical; the slope is not identified")
        warnings.append(SLOPE_UNIDENTIFIED)
    trace = nuts_sample(state_linear_program(viirs, ndic, prior_only), cfg)
    trace.meta.update(kind="state", warnings=warnings, viirs=viirs, ndic=ndic)
    return trace


def predict_state(alpha, beta, viirs):
    """Point prediction ``alpha + beta * VIIRS``."""
    return alpha + beta * np.asarray(viirs, dtype=float)
