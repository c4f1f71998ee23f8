"""Convergence diagnostics and posterior summaries."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError

SUMMARY_COLUMNS = ("param", "mean", "sd", "ci_lo", "ci_hi", "hdi_lo", "hdi_hi", "rhat", "ess")


def _as_chains(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValidationError("expected a chains x draws array for a scalar quantity")
    return x


def _split(x):
    c, n = x.shape
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half :]], axis=0)


def _resolve(trace_or_draws, param):
    if param is None:
        return _as_chains(trace_or_draws)
    return _as_chains(trace_or_draws.column(param))


def split_rhat(x):
    """Split potential scale reduction of a ``(chains, draws)`` array."""
    x = _as_chains(x)
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise ValidationError("rhat needs at least 2 chains of at least 4 draws")
    s = _split(x)
    n = s.shape[1]
    within = s.var(axis=1, ddof=1).mean()
    between = n * s.mean(axis=1).var(ddof=1)
    if within == 0.0:
        # constant chains; distinct constants never mix
        return 1.0 if between == 0.0 else math.inf
    var_hat = (n - 1) / n * within + between / n
    return float(math.sqrt(var_hat / within))


def _autocov(x):
    """Biased autocovariance of each row via FFT."""
    n = x.shape[1]
    size = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(xc, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return acov / n


def split_ess(x, cap=1.5):
    """Bulk effective sample size using Geyer's initial monotone sequence on split chains."""
    x = _as_chains(x)
    if x.shape[1] < 4:
        raise ValidationError("ess needs at least 4 draws per chain")
    s = _split(x) if x.shape[0] >= 1 else x
    m, n = s.shape
    total = m * n
    acov = _autocov(s)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += s.mean(axis=1).var(ddof=1)
    if var_plus <= 0.0:
        return float(total)
    rho = np.zeros(n)
    rho[0] = 1.0
    even = 1.0
    odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = odd
    t = 1
    while t < n - 3 and even + odd > 0.0:
        even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if even + odd >= 0.0:
            rho[t + 1] = even
            rho[t + 2] = odd
        t += 2
    max_t = t - 2
    if odd > 0.0:
        rho[max_t + 1] = odd
    # enforce a monotone sequence of pair sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = 0.5 * (rho[t - 1] + rho[t])
        t += 2
    tau = -1.0 + 2.0 * rho[: max_t + 1].sum() + rho[max_t + 1 : max_t + 2].sum()
    tau = max(tau, 1.0 / math.log10(total))
    return float(min(total / tau, cap * total))


def rhat(trace, param=None):
    """Split-R-hat of a scalar parameter (``trace`` may be a raw chains x draws array)."""
    return split_rhat(_resolve(trace, param))


def ess(trace, param=None):
    return split_ess(_resolve(trace, param))


def hdi(draws, prob=0.90):
    """Shortest interval covering ``ceil(prob * n)`` of the sorted draws."""
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    if x.size == 0:
        raise ValidationError("hdi of an empty sample")
    if not 0.0 < prob <= 1.0:
        raise ValidationError("prob must lie in (0, 1]")
    k = min(max(int(math.ceil(prob * x.size)), 1), x.size)
    widths = x[k - 1 :] - x[: x.size - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def equal_tailed(draws, prob=0.90):
    """Order-statistic interval over ``ceil(prob * n)`` draws with the remainder split between the tails.

    Covering the same number of draws as :func:`hdi` keeps the HDI no wider.
    """
    x = np.sort(np.asarray(draws, dtype=float).ravel())
    if x.size == 0:
        raise ValidationError("interval of an empty sample")
    if not 0.0 < prob <= 1.0:
        raise ValidationError("prob must lie in (0, 1]")
    k = min(max(int(math.ceil(prob * x.size)), 1), x.size)
    lo = (x.size - k) // 2
    return float(x[lo]), float(x[lo + k - 1])


@dataclass(frozen=True)
class SummaryRow:
    param: str
    mean: float
    sd: float
    ci_lo: float
    ci_hi: float
    hdi_lo: float
    hdi_hi: float
    iqr: float
    rhat: float
    ess: float

    def as_csv_row(self):
        return [self.param] + [_fmt(getattr(self, c)) for c in SUMMARY_COLUMNS[1:]]


def _fmt(v):
    return repr(float(v))


def summarize_column(label, x, prob=0.90):
    x = _as_chains(x)
    flat = x.ravel()
    if flat.size == 0:
        raise ValidationError(f"no draws for {label}")
    ci = equal_tailed(flat, prob)
    h = hdi(flat, prob)
    q1, q3 = np.quantile(flat, [0.25, 0.75])
    try:
        r = split_rhat(x)
    except ValidationError:
        r = math.nan
    try:
        e = split_ess(x)
    except ValidationError:
        e = math.nan
    sd = float(flat.std(ddof=1)) if flat.size > 1 else 0.0
    return SummaryRow(label, float(flat.mean()), sd, ci[0], ci[1], h[0], h[1], float(q3 - q1), r, e)


def summarize(trace, prob=0.90, include_deterministic=True):
    """One :class:`SummaryRow` per scalar component of the trace."""
    if not 0.0 < prob < 1.0:
        raise ValidationError("prob must lie in (0, 1)")
    return [summarize_column(label, arr, prob) for label, arr in trace.scalar_columns(include_deterministic)]


def write_summary_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow(row.as_csv_row())


def max_rhat(trace, include_deterministic=False):
    vals = [split_rhat(arr) for _, arr in trace.scalar_columns(include_deterministic)]
    vals = [v for v in vals if not math.isnan(v)]
    return max(vals) if vals else 1.0
