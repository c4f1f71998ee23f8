"""Unnormalized log-posteriors over a flat unconstrained parameter vector."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteError, ValidationError
from . import tape as ad
from .transforms import ParamSpec, from_unconstrained_with_jacobian


class LogDensityProgram:
    """A differentiable log-posterior ``log p(D | theta) + log p(theta)``.

    Parameters
    ----------
    params : sequence of ParamSpec
        Parameter blocks, laid out in order in the unconstrained vector.
    log_prob : callable
        ``log_prob(values) -> scalar`` with ``values`` a dict of constrained
        parameter values (tape variables or arrays). Must use the polymorphic
        functions of :mod:`flarestat.ppl.tape` so it can be differentiated.
    pointwise_loglik : callable, optional
        ``pointwise_loglik(values) -> (n_obs,) array`` on numeric values.
    deterministics : callable, optional
        ``deterministics(values) -> dict`` of derived quantities to store
        alongside each draw.
    init : dict, optional
        Constrained centre for chain initialization; parameters not listed
        start around the origin of the unconstrained space.

    The program holds no mutable state; evaluations build a private tape.
    """

    def __init__(self, params, log_prob, *, pointwise_loglik=None, deterministics=None, init=None, name=""):
        params = list(params)
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate parameter names in {names}")
        for p in params:
            if not isinstance(p, ParamSpec):
                raise TypeError("params must be ParamSpec instances")
        self.params = tuple(params)
        self.name = name
        self._log_prob = log_prob
        self._pointwise_loglik = pointwise_loglik
        self._deterministics = deterministics
        offsets = np.cumsum([0] + [p.free_size for p in params])
        self._slices = {p.name: slice(int(offsets[i]), int(offsets[i + 1])) for i, p in enumerate(params)}
        self.dim = int(offsets[-1])
        self._init = dict(init or {})
        for key in self._init:
            if key not in self._slices:
                raise ValidationError(f"init refers to unknown parameter {key!r}")

    def __repr__(self):
        return f"LogDensityProgram({self.name!r}, dim={self.dim})"

    @property
    def has_loglik(self):
        return self._pointwise_loglik is not None

    def slice_of(self, name):
        return self._slices[name]

    def _check_u(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValidationError(f"expected unconstrained vector of length {self.dim}, got shape {u.shape}")
        return u

    def constrain(self, u):
        """Dict of constrained numeric values."""
        u = self._check_u(u)
        out = {}
        for p in self.params:
            x, _ = from_unconstrained_with_jacobian(p, u[self._slices[p.name]])
            out[p.name] = np.asarray(x, dtype=float).reshape(p.shape)
        return out

    def unconstrain(self, values):
        """Flat unconstrained vector for a dict of constrained values."""
        u = np.zeros(self.dim)
        for p in self.params:
            u[self._slices[p.name]] = p.constraint.inverse(np.asarray(values[p.name], dtype=float))
        return u

    def init_center(self):
        """Unconstrained point around which chains are initialized."""
        u = np.zeros(self.dim)
        for p in self.params:
            if p.name in self._init:
                u[self._slices[p.name]] = p.constraint.inverse(np.asarray(self._init[p.name], dtype=float))
        return u

    def log_density(self, u):
        """Log-posterior at ``u`` including Jacobian terms, without gradient."""
        u = self._check_u(u)
        total = 0.0
        values = {}
        for p in self.params:
            x, log_j = from_unconstrained_with_jacobian(p, u[self._slices[p.name]])
            values[p.name] = x
            total = total + log_j
        try:
            total = total + self._log_prob(values)
        except np.linalg.LinAlgError:
            return -np.inf
        total = float(total)
        return total if np.isfinite(total) else -np.inf

    def value_and_grad(self, u, strict=False):
        """Log-posterior and its gradient at ``u``.

        Non-finite results return ``(-inf, zeros)`` unless ``strict`` is set,
        in which case :class:`NonFiniteError` names the offending parameter.
        """
        u = self._check_u(u)
        tape = ad.Tape()
        leaves = []
        total = 0.0
        values = {}
        with np.errstate(all="ignore"):
            for p in self.params:
                leaf = tape.variable(u[self._slices[p.name]])
                leaves.append(leaf)
                x, log_j = from_unconstrained_with_jacobian(p, leaf)
                values[p.name] = x
                total = total + log_j
            try:
                total = total + self._log_prob(values)
            except np.linalg.LinAlgError:
                if strict:
                    raise NonFiniteError("covariance matrix not positive definite") from None
                return -np.inf, np.zeros(self.dim)
            value = float(ad.value_of(total))
            if not np.isfinite(value):
                if strict:
                    raise NonFiniteError(f"log density is {value}", self._blame(values))
                return -np.inf, np.zeros(self.dim)
            grads = tape.gradient(total, leaves)
        grad = np.concatenate(grads) if grads else np.zeros(0)
        if not np.all(np.isfinite(grad)):
            if strict:
                bad = int(np.flatnonzero(~np.isfinite(grad))[0])
                raise NonFiniteError("non-finite gradient", self._name_at(bad))
            return -np.inf, np.zeros(self.dim)
        return value, grad

    def _name_at(self, i):
        for name, sl in self._slices.items():
            if sl.start <= i < sl.stop:
                return name
        return None

    def _blame(self, values):
        for p in self.params:
            if not np.all(np.isfinite(ad.value_of(values[p.name]))):
                return p.name
        return self.params[-1].name if self.params else None

    def pointwise_loglik(self, values):
        if self._pointwise_loglik is None:
            return None
        return np.asarray(self._pointwise_loglik(values), dtype=float)

    def deterministics(self, values):
        if self._deterministics is None:
            return {}
        return {k: np.asarray(v, dtype=float) for k, v in self._deterministics(values).items()}


def tape_eval(program, u):
    """``(value, grad)`` of the program at ``u``; raises on non-finite results."""
    return program.value_and_grad(u, strict=True)
