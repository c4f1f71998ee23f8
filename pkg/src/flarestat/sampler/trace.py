"""Posterior sample container and its JSON form."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ..errors import ValidationError

DETERMINISTIC = "deterministic"


@dataclass
class Trace:
    """Chains x draws posterior samples on the constrained scale.

    ``samples[name]`` has shape ``(chains, draws, *param_shape)``;
    ``log_lik`` is ``(chains, draws, n_obs)`` or ``None``. ``params`` lists
    ``(name, shape, constraint)`` triples in program order, with derived
    quantities carrying the ``"deterministic"`` constraint. ``meta`` holds
    in-memory annotations (model kind, warnings) and is not serialized.
    """

    params: list
    samples: dict
    log_lik: np.ndarray | None = None
    stats: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.params = [(str(n), tuple(int(s) for s in shp), str(c)) for n, shp, c in self.params]
        shapes = set()
        for name, shape, _ in self.params:
            arr = np.asarray(self.samples[name], dtype=float)
            if arr.ndim < 2 or arr.shape[2:] != shape:
                raise ValidationError(f"samples for {name!r} have shape {arr.shape}, expected (C, N) + {shape}")
            self.samples[name] = arr
            shapes.add(arr.shape[:2])
        if len(shapes) != 1:
            raise ValidationError("all parameters must have the same number of chains and draws")
        (self._cn,) = shapes
        if self.log_lik is not None:
            self.log_lik = np.asarray(self.log_lik, dtype=float)
            if self.log_lik.shape[:2] != self._cn:
                raise ValidationError("log_lik must be chains x draws x n_obs")
        self.stats = {k: np.asarray(v) for k, v in self.stats.items()}

    @property
    def chains(self):
        return self._cn[0]

    @property
    def draws(self):
        return self._cn[1]

    @property
    def names(self):
        return [p[0] for p in self.params]

    def shape_of(self, name):
        for n, shape, _ in self.params:
            if n == name:
                return shape
        raise KeyError(name)

    def __getitem__(self, name):
        return self.samples[name]

    def __contains__(self, name):
        return name in self.samples

    def flat(self, name):
        """Draws of ``name`` with chains concatenated: ``(chains * draws, *shape)``."""
        a = self.samples[name]
        return a.reshape((-1,) + a.shape[2:])

    def posterior_mean(self, name):
        return self.flat(name).mean(axis=0)

    def scalar_columns(self, include_deterministic=True):
        """``(label, chains x draws array)`` for every scalar component.

        Vector entries are labelled ``name[i]``, matrices ``name[i,j]``.
        """
        out = []
        for name, shape, constraint in self.params:
            if constraint == DETERMINISTIC and not include_deterministic:
                continue
            arr = self.samples[name]
            if shape == ():
                out.append((name, arr))
                continue
            for idx in product(*(range(s) for s in shape)):
                label = f"{name}[{','.join(str(i) for i in idx)}]"
                out.append((label, arr[(slice(None), slice(None)) + idx]))
        return out

    def column(self, label):
        for lab, arr in self.scalar_columns():
            if lab == label:
                return arr
        raise KeyError(label)

    @property
    def divergences(self):
        d = self.stats.get("divergences")
        return 0 if d is None else int(np.sum(d))

    def to_dict(self):
        doc = {
            "params": [{"name": n, "shape": list(s), "constraint": c} for n, s, c in self.params],
            "chains": int(self.chains),
            "draws": int(self.draws),
            "samples": {n: self.samples[n].tolist() for n in self.names},
            "log_lik": None if self.log_lik is None else self.log_lik.tolist(),
            "stats": {
                "divergences": np.asarray(self.stats.get("divergences", np.zeros(self._cn)), dtype=int).tolist(),
                "step_size": np.asarray(self.stats.get("step_size", np.full(self._cn, np.nan)), dtype=float).tolist(),
                "tree_depth": np.asarray(self.stats.get("tree_depth", np.zeros(self._cn)), dtype=int).tolist(),
            },
        }
        return doc

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"), allow_nan=True)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def from_dict(cls, doc):
        try:
            params = [(p["name"], tuple(p["shape"]), p["constraint"]) for p in doc["params"]]
            samples = {n: np.asarray(doc["samples"][n], dtype=float) for n, _, _ in params}
            for n, shape, _ in params:
                want = (int(doc["chains"]), int(doc["draws"])) + shape
                samples[n] = samples[n].reshape(want)
            ll = doc.get("log_lik")
            stats = {k: np.asarray(v) for k, v in doc.get("stats", {}).items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed trace document: {exc}") from None
        return cls(params, samples, None if ll is None else np.asarray(ll, dtype=float), stats)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    @classmethod
    def from_arrays(cls, samples, constraints=None):
        """Build a trace from ``{name: (chains, draws, ...)}`` arrays, e.g. for diagnostics."""
        constraints = constraints or {}
        params = []
        for name, arr in samples.items():
            arr = np.asarray(arr, dtype=float)
            params.append((name, arr.shape[2:], constraints.get(name, "real")))
        return cls(params, {k: np.asarray(v, dtype=float) for k, v in samples.items()})
