"""Monthly CSV ingestion, series assembly and correlation analytics."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass
from functools import total_ordering

import numpy as np
from scipy import stats

from .errors import DataError, ValidationError
from .models.records import CountyRegistry, EntitySeries

M3_PER_MCF = 28.316846592
BCM_PER_MCF = M3_PER_MCF / 1e9
VIIRS_COLUMNS = ("month", "lat", "lon", "volume_bcm")
NDIC_COLUMNS = ("month", "well_id", "operator", "oilfield", "county", "lat", "lon", "oil_bbl", "gas_mcf", "flared_mcf")
SERIES_COLUMNS = (
    "month",
    "viirs_bcm",
    "ndic_bcm",
    "oil_bbl",
    "gas_mcf",
    "flared_mcf",
    "wells",
    "flaring_wells",
    "detections",
    "gor",
)
KDE_POINTS = 512


def mcf_to_bcm(v):
    return np.asarray(v, dtype=float) * BCM_PER_MCF


@total_ordering
@dataclass(frozen=True)
class MonthStamp:
    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValidationError(f"month {self.month} outside [1, 12]")

    @classmethod
    def parse(cls, text):
        try:
            y, m = str(text).strip().split("-")
            if len(y) != 4 or len(m) != 2:
                raise ValueError
            return cls(int(y), int(m))
        except ValueError:
            raise ValidationError(f"month {text!r} is not YYYY-MM") from None

    @property
    def ordinal(self):
        return self.year * 12 + self.month - 1

    def index_from(self, start):
        """Months since ``start``."""
        return self.ordinal - start.ordinal

    def shift(self, n):
        o = self.ordinal + n
        return MonthStamp(o // 12, o % 12 + 1)

    def __lt__(self, other):
        return self.ordinal < other.ordinal

    def __str__(self):
        return f"{self.year:04d}-{self.month:02d}"


def month_range(first, last):
    return [first.shift(i) for i in range(last.index_from(first) + 1)]


def check_contiguous(months):
    """Raise listing the stamps missing from the span of ``months``."""
    months = sorted(set(months))
    if not months:
        raise ValidationError("no months")
    missing = [m for m in month_range(months[0], months[-1]) if m not in set(months)]
    if missing:
        raise ValidationError("months are not contiguous; missing " + ", ".join(map(str, missing)))
    return months


@dataclass(frozen=True)
class FlareDetection:
    month: MonthStamp
    lat: float
    lon: float
    volume_bcm: float
    row: int = 0


@dataclass(frozen=True)
class WellRecord:
    month: MonthStamp
    well_id: str
    operator: str
    oilfield: str
    county: str
    lat: float
    lon: float
    oil_bbl: float
    gas_mcf: float
    flared_mcf: float
    row: int = 0


# ---------------------------------------------------------------- parsing


def _open_rows(path, columns):
    fh = open(path, newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in columns if c not in header]
    if missing:
        fh.close()
        raise DataError(f"{path}: header lacks {', '.join(missing)}", row=0)
    return fh, reader


def _num(rec, col, row, lo=None, hi=None):
    text = rec.get(col)
    try:
        v = float(text)
    except (TypeError, ValueError):
        raise DataError(f"{text!r} is not a number", row, col) from None
    if not math.isfinite(v):
        raise DataError(f"{text!r} is not finite", row, col)
    if lo is not None and v < lo:
        raise DataError(f"{v} below {lo}", row, col)
    if hi is not None and v > hi:
        raise DataError(f"{v} above {hi}", row, col)
    return v


def _month(rec, row):
    try:
        return MonthStamp.parse(rec.get("month"))
    except ValidationError as exc:
        raise DataError(str(exc), row, "month") from None


def _text(rec, col, row):
    v = (rec.get(col) or "").strip()
    if not v:
        raise DataError("empty value", row, col)
    return v


def parse_viirs_csv(path):
    """VIIRS detections; extra columns are ignored."""
    fh, reader = _open_rows(path, VIIRS_COLUMNS)
    out = []
    with fh:
        for row, rec in enumerate(reader, start=1):
            out.append(
                FlareDetection(
                    _month(rec, row),
                    _num(rec, "lat", row, -90, 90),
                    _num(rec, "lon", row, -180, 180),
                    _num(rec, "volume_bcm", row, 0),
                    row,
                )
            )
    return out


def parse_ndic_csv(path, registry=None):
    """NDIC well rows; county codes are checked against ``registry``."""
    registry = registry or CountyRegistry()
    fh, reader = _open_rows(path, NDIC_COLUMNS)
    out = []
    with fh:
        for row, rec in enumerate(reader, start=1):
            county = _text(rec, "county", row)
            try:
                registry.index_of(county)
            except ValidationError:
                raise DataError(f"unknown county {county!r}", row, "county") from None
            out.append(
                WellRecord(
                    _month(rec, row),
                    _text(rec, "well_id", row),
                    _text(rec, "operator", row),
                    (rec.get("oilfield") or "").strip(),
                    registry.label_of(registry.index_of(county)),
                    _num(rec, "lat", row, -90, 90),
                    _num(rec, "lon", row, -180, 180),
                    _num(rec, "oil_bbl", row, 0),
                    _num(rec, "gas_mcf", row, 0),
                    _num(rec, "flared_mcf", row, 0),
                    row,
                )
            )
    return out


def _writer(path, columns):
    fh = open(path, "w", newline="", encoding="utf-8")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    return fh, w


def write_viirs_csv(records, path):
    fh, w = _writer(path, VIIRS_COLUMNS)
    with fh:
        for r in records:
            w.writerow([str(r.month), repr(r.lat), repr(r.lon), repr(r.volume_bcm)])


def write_ndic_csv(records, path):
    fh, w = _writer(path, NDIC_COLUMNS)
    with fh:
        for r in records:
            w.writerow(
                [str(r.month), r.well_id, r.operator, r.oilfield, r.county, repr(r.lat), repr(r.lon), repr(r.oil_bbl), repr(r.gas_mcf), repr(r.flared_mcf)]
            )


# ---------------------------------------------------------------- aggregation


@dataclass
class MonthlySeries:
    """State-level monthly rollup of both sources on a contiguous grid."""

    months: list
    columns: dict

    def __len__(self):
        return len(self.months)

    def __getitem__(self, name):
        return self.columns[name]

    def to_entity(self, name="state"):
        c = self.columns
        return EntitySeries(
            np.arange(len(self.months), dtype=float),
            flared=c["flared_mcf"],
            gas=c["gas_mcf"],
            oil=c["oil_bbl"],
            wells=c["wells"],
            flaring_wells=c["flaring_wells"],
            detections=c["detections"],
            viirs=c["viirs_bcm"],
            ndic=c["ndic_bcm"],
            name=name,
            months=[str(m) for m in self.months],
        )


def state_series(detections, wells, months=None):
    """Aggregate detections and well rows into one row per month.

    ``gor`` is gas/oil (mcf per bbl; NaN when no oil). Months without any
    record are an error: the models need a regular grid.
    """
    if months is None:
        months = sorted({d.month for d in detections} | {w.month for w in wells})
    months = check_contiguous(months)
    pos = {m: i for i, m in enumerate(months)}
    n = len(months)
    cols = {c: np.zeros(n) for c in SERIES_COLUMNS[1:]}
    seen_v, seen_n = set(), set()
    for d in detections:
        if d.month in pos:
            i = pos[d.month]
            cols["viirs_bcm"][i] += d.volume_bcm
            cols["detections"][i] += 1
            seen_v.add(d.month)
    for w in wells:
        if w.month in pos:
            i = pos[w.month]
            cols["oil_bbl"][i] += w.oil_bbl
            cols["gas_mcf"][i] += w.gas_mcf
            cols["flared_mcf"][i] += w.flared_mcf
            cols["wells"][i] += 1
            cols["flaring_wells"][i] += w.flared_mcf > 0
            seen_n.add(w.month)
    for label, seen in (("VIIRS", seen_v), ("NDIC", seen_n)):
        gaps = [str(m) for m in months if m not in seen]
        if gaps:
            raise ValidationError(f"{label} has no records for " + ", ".join(gaps))
    cols["ndic_bcm"] = mcf_to_bcm(cols["flared_mcf"])
    with np.errstate(divide="ignore", invalid="ignore"):
        cols["gor"] = np.where(cols["oil_bbl"] > 0, cols["gas_mcf"] / cols["oil_bbl"], np.nan)
    return MonthlySeries(months, cols)


def write_series_csv(series, path):
    fh, w = _writer(path, SERIES_COLUMNS)
    with fh:
        for i, m in enumerate(series.months):
            w.writerow([str(m)] + [repr(float(series.columns[c][i])) for c in SERIES_COLUMNS[1:]])


def read_series_csv(path):
    """Inverse of :func:`write_series_csv`; only ``month`` is mandatory."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "month" not in header:
            raise DataError(f"{path}: header lacks month", row=0)
        months, cols = [], defaultdict(list)
        numeric = [c for c in header if c != "month"]
        for row, rec in enumerate(reader, start=1):
            months.append(_month(rec, row))
            for c in numeric:
                cols[c].append(float("nan") if rec[c] in ("nan", "") else _num(rec, c, row))
    check_contiguous(months)
    if sorted(months) != months:
        raise ValidationError(f"{path}: months are not in order")
    return MonthlySeries(months, {c: np.asarray(v, dtype=float) for c, v in cols.items()})


def series_entity(series, name="series"):
    """EntitySeries from whichever standard columns ``series`` carries."""
    c = series.columns
    pick = lambda k: c.get(k)  # noqa: E731
    return EntitySeries(
        np.arange(len(series.months), dtype=float),
        flared=pick("flared_mcf"),
        gas=pick("gas_mcf"),
        oil=pick("oil_bbl"),
        wells=pick("wells"),
        flaring_wells=pick("flaring_wells"),
        detections=pick("detections"),
        viirs=pick("viirs_bcm"),
        ndic=pick("ndic_bcm"),
        name=name,
        months=[str(m) for m in series.months],
    )


def county_rows(viirs_county, wells, registry=None):
    """Per county-month ``(county, month, viirs_bcm, ndic_bcm)`` rows.

    ``viirs_county`` pairs each detection with its county label (None when
    outside every county). Only county-months present in both sources are
    returned, ordered by county index then month.
    """
    registry = registry or CountyRegistry()
    v, nd = defaultdict(float), defaultdict(float)
    for det, county in viirs_county:
        if county is not None:
            v[(registry.index_of(county), det.month)] += det.volume_bcm
    for w in wells:
        nd[(registry.index_of(w.county), w.month)] += w.flared_mcf
    keys = sorted(set(v) & set(nd), key=lambda k: (k[0], k[1].ordinal))
    return [(registry.label_of(c), m, v[(c, m)], float(mcf_to_bcm(nd[(c, m)]))) for c, m in keys]


# ---------------------------------------------------------------- analytics


def first_difference(s):
    s = np.asarray(s, dtype=float)
    if s.size < 2:
        raise ValidationError("first differences need at least 2 values")
    return s[1:] - s[:-1]


def spearman(x, y):
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("spearman needs two 1-D series of equal length")
    if x.size < 3:
        raise ValidationError("spearman needs at least 3 observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValidationError("spearman inputs must be finite")
    rx, ry = stats.rankdata(x), stats.rankdata(y)
    rx, ry = rx - rx.mean(), ry - ry.mean()
    den = math.sqrt(float(np.dot(rx, rx) * np.dot(ry, ry)))
    if den == 0:
        raise ValidationError("spearman is undefined for a constant series")
    return float(np.clip(np.dot(rx, ry) / den, -1.0, 1.0))


def correlation_matrix(series, mode="levels"):
    """Pairwise Spearman over aligned monthly series, lower triangle only.

    ``series`` maps names to ``{MonthStamp: value}`` dicts (or to
    ``(months, values)`` pairs). Returns ``(row, col, rho)`` triples in
    row-major order of the lower triangle, without the diagonal.
    """
    if mode not in ("levels", "lag1"):
        raise ValidationError("mode must be 'levels' or 'lag1'")
    if len(series) < 2:
        raise ValidationError("need at least 2 series")
    maps = {}
    for name, s in series.items():
        if isinstance(s, dict):
            maps[name] = s
        else:
            months, values = s
            maps[name] = dict(zip(months, np.asarray(values, dtype=float)))
    all_months = sorted(set().union(*[set(m) for m in maps.values()]))
    problems = []
    for name, m in maps.items():
        gone = [str(t) for t in all_months if t not in m]
        if gone:
            problems.append(f"{name}: {', '.join(gone)}")
    if problems:
        raise ValidationError("misaligned months; missing " + "; ".join(problems))
    names = list(maps)
    arrays = {k: np.array([maps[k][t] for t in all_months], dtype=float) for k in names}
    if mode == "lag1":
        check_contiguous(all_months)
        arrays = {k: first_difference(v) for k, v in arrays.items()}
    out = []
    for i in range(1, len(names)):
        for j in range(i):
            out.append((names[i], names[j], spearman(arrays[names[i]], arrays[names[j]])))
    return out


def write_correlation_csv(rows, path):
    fh, w = _writer(path, ("row", "col", "rho"))
    with fh:
        for r, c, rho in rows:
            w.writerow([r, c, repr(rho)])


def exclude_nonpositive(volumes):
    """``(positive volumes, number excluded)``."""
    v = np.asarray(volumes, dtype=float)
    keep = v > 0
    return v[keep], int(np.sum(~keep))


def log_magnitude(volumes):
    """Natural-log magnitudes of positive volumes."""
    v = np.asarray(volumes, dtype=float)
    if np.any(~(v > 0)):
        raise ValidationError("log magnitudes need strictly positive volumes")
    return np.log(v)


def scott_bandwidth(values):
    v = np.asarray(values, dtype=float)
    return float(np.std(v, ddof=1) * v.size ** (-0.2))


def kde(values, n_points=KDE_POINTS, bandwidth=None):
    """Gaussian KDE on a grid spanning the data plus three bandwidths each side.

    Returns ``(grid, density, h)``; ``h`` defaults to Scott's rule.
    """
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise ValidationError("KDE needs at least 2 values")
    if not np.all(np.isfinite(v)):
        raise ValidationError("KDE inputs must be finite")
    if np.std(v) == 0:
        raise ValidationError("KDE is undefined for zero-variance data")
    h = scott_bandwidth(v) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise ValidationError("bandwidth must be positive")
    grid = np.linspace(v.min() - 3 * h, v.max() + 3 * h, n_points)
    z = (grid[:, None] - v[None, :]) / h
    dens = np.exp(-0.5 * z**2).sum(axis=1) / (v.size * h * math.sqrt(2 * math.pi))
    return grid, dens, h


def group_by_month(records):
    out = defaultdict(list)
    for r in records:
        out[r.month].append(r)
    return dict(sorted(out.items()))
