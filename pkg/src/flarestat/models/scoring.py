"""WAIC scoring, model ranking and percentile bands."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import ValidationError

MIN_WAIC_DRAWS = 100
BAND_COLUMNS = ("grid", "percentile_lo", "percentile_hi", "value_lo", "value_hi")
DEFAULT_BANDS = ((1, 99),) + tuple((p, 100 - p) for p in range(5, 50, 5)) + ((49, 51),)


def _loglik_matrix(obj):
    ll = getattr(obj, "log_lik", obj)
    if ll is None:
        raise ValidationError("trace has no per-observation log-likelihood")
    ll = np.asarray(ll, dtype=float)
    if ll.ndim == 3:
        ll = ll.reshape(-1, ll.shape[-1])
    if ll.ndim != 2:
        raise ValidationError("log-likelihood must be draws x observations")
    return ll


@dataclass(frozen=True)
class WAIC:
    waic: float
    se: float
    p_waic: float
    lppd: float
    pointwise: np.ndarray

    def __iter__(self):
        return iter((self.waic, self.se, self.p_waic))


def waic(trace_or_loglik):
    """WAIC on the deviance scale: ``-2 lppd + 2 p_waic``.

    ``p_waic`` sums the per-observation sample variance of the log-likelihood
    across draws; the standard error is ``sqrt(n var(waic_i))``.
    """
    ll = _loglik_matrix(trace_or_loglik)
    s, n = ll.shape
    if s < MIN_WAIC_DRAWS:
        raise ValidationError(f"WAIC needs at least {MIN_WAIC_DRAWS} posterior draws, got {s}")
    if np.any(np.isnan(ll)):
        raise ValidationError("log-likelihood contains NaN")
    finite = np.isfinite(ll)
    counts = finite.sum(axis=0)
    if np.any(counts < 2):
        i = int(np.flatnonzero(counts < 2)[0])
        raise ValidationError(f"observation {i} has fewer than 2 finite log-likelihood draws")
    lppd_i = special.logsumexp(ll, axis=0) - np.log(s)
    if np.all(finite):
        p_i = ll.var(axis=0, ddof=1)
    else:
        masked = np.where(finite, ll, np.nan)
        p_i = np.nanvar(masked, axis=0, ddof=1)
    waic_i = -2.0 * (lppd_i - p_i)
    se = float(np.sqrt(n * waic_i.var()))
    return WAIC(float(waic_i.sum()), se, float(p_i.sum()), float(lppd_i.sum()), waic_i)


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    waic: float
    se: float
    p_waic: float
    d_waic: float
    d_se: float


def compare_models(fits):
    """Rank fits by ascending WAIC.

    ``fits`` maps names to traces (or log-likelihood arrays); a list is
    labelled by position. ``d_se`` is the standard error of the pointwise
    difference to the best model.
    """
    if not isinstance(fits, dict):
        fits = {str(i): f for i, f in enumerate(fits)}
    if not fits:
        raise ValidationError("no models to compare")
    scores = {name: waic(f) for name, f in fits.items()}
    sizes = {sc.pointwise.size for sc in scores.values()}
    if len(sizes) != 1:
        raise ValidationError("models were scored on different numbers of observations")
    order = sorted(scores, key=lambda k: (scores[k].waic, k))
    best = scores[order[0]].pointwise
    rows = []
    for name in order:
        sc = scores[name]
        diff = sc.pointwise - best
        rows.append(ComparisonRow(name, sc.waic, sc.se, sc.p_waic, float(diff.sum()), float(np.sqrt(diff.size * diff.var()))))
    return rows


@dataclass(frozen=True)
class Band:
    grid: float
    percentile_lo: float
    percentile_hi: float
    value_lo: float
    value_hi: float


def percentile_bands(samples, grid=None, bands=DEFAULT_BANDS):
    """Nested percentile bands of ``samples`` (draws x grid points)."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] < 100:
        raise ValidationError("percentile bands need at least 100 samples per grid point")
    g = np.arange(samples.shape[1], dtype=float) if grid is None else np.asarray(grid, dtype=float)
    if g.size != samples.shape[1]:
        raise ValidationError("grid length does not match the samples")
    for lo, hi in bands:
        if not 0 <= lo <= hi <= 100:
            raise ValidationError(f"invalid band ({lo}, {hi})")
    pcts = sorted({p for b in bands for p in b})
    q = dict(zip(pcts, np.percentile(samples, pcts, axis=0)))
    rows = []
    for j, x in enumerate(g):
        for lo, hi in bands:
            rows.append(Band(float(x), float(lo), float(hi), float(q[lo][j]), float(q[hi][j])))
    return rows


def write_bands_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BAND_COLUMNS)
        for b in rows:
            w.writerow([repr(b.grid), repr(b.percentile_lo), repr(b.percentile_hi), repr(b.value_lo), repr(b.value_hi)])
