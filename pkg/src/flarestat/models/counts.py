"""Overdispersed detection counts pooled across oilfields."""

from __future__ import annotations

import numpy as np

from .. import distributions as D
from ..errors import ValidationError
from ..ppl import LogDensityProgram, ParamSpec, positive
from ..ppl import tape as ad
from ..sampler import SamplerConfig, nuts_sample


def negbin_program(counts):
    counts = np.asarray(counts, dtype=float)

    def loglik(v):
        return D.NegBinomial(v["mu"], v["phi"]).logpdf(counts)

    def log_prob(v):
        return D.Gamma(2.0, 1.0).logpdf(v["mu"]) + D.Exponential(1.0).logpdf(v["phi"]) + ad.sum(loglik(v))

    return LogDensityProgram(
        [ParamSpec("mu", (), positive), ParamSpec("phi", (), positive)],
        log_prob,
        pointwise_loglik=loglik,
        init={"mu": max(float(counts.mean()), 0.1), "phi": 1.0},
        name="negbin",
    )


def fit_negbin_counts(counts, cfg=None):
    """Posterior over ``(mu, phi)`` of ``C_i ~ NegBinomial(mu, phi)``."""
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 1 or counts.size < 10:
        raise ValidationError("need at least 10 counts")
    if np.any(counts < 0) or np.any(counts != np.floor(counts)):
        raise ValidationError("counts must be non-negative integers")
    trace = nuts_sample(negbin_program(counts), cfg or SamplerConfig())
    trace.meta.update(kind="negbin", counts=counts)
    return trace
