"""Differentiable log-density evaluation."""

from . import tape
from .program import LogDensityProgram, tape_eval
from .transforms import (
    CholeskyCorr,
    Constraint,
    ParamSpec,
    Simplex,
    from_unconstrained,
    parse_constraint,
    positive,
    real,
    to_unconstrained,
    unit_interval,
)

__all__ = [
    "tape",
    "LogDensityProgram",
    "tape_eval",
    "CholeskyCorr",
    "Constraint",
    "ParamSpec",
    "Simplex",
    "from_unconstrained",
    "parse_constraint",
    "positive",
    "real",
    "to_unconstrained",
    "unit_interval",
]
