"""Nighttime multispectral flare detection and characterization.

Pipeline: hot pixels per band (mean + k sd), coincidence across bands,
graybody Planck fit per source (temperature and emission scaling factor),
source area ``S = eps A`` and radiant heat ``sigma T^4 S``; detections can
then be grouped with a haversine DBSCAN.
"""

from __future__ import annotations

import csv
import json
import math
import os
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy import constants, optimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import NumericalError, ValidationError
from .geo import R_EARTH_M, _unit_vectors, haversine_m

H = constants.h
C = constants.c
KB = constants.k
SIGMA_SB = 5.670374419e-8
T_GRID = (600.0, 3000.0, 10.0)
GOLDEN_TOL_K = 0.1
DETECTION_COLUMNS = ("lat", "lon", "T_k", "epsilon", "S_m2", "RH_mw")
NOISE = -1


@dataclass(frozen=True)
class BandImage:
    band: str
    wavelength_m: float
    values: np.ndarray
    pixel_area_m2: float
    geotransform: tuple = (0.0, 1.0, 0.0, 0.0, 0.0, -1.0)

    def __post_init__(self):
        if not self.wavelength_m > 0:
            raise ValidationError("wavelength must be positive")
        if not self.pixel_area_m2 > 0:
            raise ValidationError("pixel area must be positive")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise ValidationError("band image must be a non-empty 2-D grid")
        if len(self.geotransform) != 6:
            raise ValidationError("geotransform needs 6 coefficients")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "geotransform", tuple(float(g) for g in self.geotransform))

    def pixel_latlon(self, row, col):
        """Coordinates of the pixel centre: lon = a + b x + c y, lat = d + e x + f y."""
        a, b, c, d, e, f = self.geotransform
        x, y = np.asarray(col, float) + 0.5, np.asarray(row, float) + 0.5
        return d + e * x + f * y, a + b * x + c * y


@dataclass(frozen=True)
class HotSource:
    lat: float
    lon: float
    T: float
    epsilon: float
    S: float
    RH: float

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValidationError("emission scaling factor must lie in (0, 1]")
        if not (self.T > 0 and self.S > 0):
            raise ValidationError("temperature and source area must be positive")


# ---------------------------------------------------------------- detection


def background(values, robust=False):
    """Location and scale of band noise: mean/sd, or median/1.4826 MAD."""
    v = np.asarray(values, dtype=float)
    if robust:
        med = float(np.median(v))
        return med, 1.4826 * float(np.median(np.abs(v - med)))
    return float(v.mean()), float(v.std())


def detect_hot_pixels(img, k=4.0, robust=False):
    """Pixels brighter than ``mean + k sd`` of the whole band, as (row, col) tuples."""
    v = img.values if isinstance(img, BandImage) else np.asarray(img, dtype=float)
    if v.size == 0:
        raise ValidationError("empty image")
    loc, scale = background(v, robust)
    if scale == 0:
        return set()
    rows, cols = np.nonzero(v > loc + k * scale)
    return set(zip(rows.tolist(), cols.tolist()))


def coincidence_filter(detections, min_bands=2):
    """Pixels flagged in at least ``min_bands`` of the per-band detection sets."""
    detections = list(detections)
    if len(detections) < 2:
        raise ValidationError("coincidence filtering needs at least 2 bands")
    counts = Counter(p for d in detections for p in set(d))
    return {p for p, n in counts.items() if n >= min_bands}


# ---------------------------------------------------------------- physics


def planck_radiance(wavelength_m, T):
    """Spectral radiance B(lambda, T) in W m^-2 sr^-1 m^-1."""
    lam = np.asarray(wavelength_m, dtype=float)
    T = np.asarray(T, dtype=float)
    if np.any(lam <= 0) or np.any(T <= 0):
        raise ValidationError("wavelength and temperature must be positive")
    with np.errstate(over="ignore"):
        return (2.0 * H * C**2 / lam**5) / np.expm1(H * C / (lam * KB * T))


def source_area(epsilon, pixel_area):
    if not 0 < epsilon <= 1:
        raise ValidationError("emission scaling factor must lie in (0, 1]")
    if not pixel_area > 0:
        raise ValidationError("pixel area must be positive")
    return epsilon * pixel_area


def radiant_heat(T, S):
    """Stefan-Boltzmann output ``sigma T^4 S`` in megawatts."""
    if not (T > 0 and S > 0):
        raise ValidationError("temperature and source area must be positive")
    return SIGMA_SB * T**4 * S / 1e6


@dataclass(frozen=True)
class GraybodyFit:
    T: float
    epsilon: float
    epsilon_raw: float
    residual: float


def _eps_of(r, B):
    return float(np.dot(r, B) / np.dot(B, B))


def _sse(r, lam, T):
    B = planck_radiance(lam, T)
    e = _eps_of(r, B)
    return float(np.sum((r - e * B) ** 2))


def golden_section(f, a, b, tol):
    """Minimize a unimodal ``f`` on ``[a, b]`` until the bracket is under ``tol``."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_graybody(radiances, wavelengths, t_grid=T_GRID, tol=GOLDEN_TOL_K, polish=True):
    """Least-squares graybody fit ``r_b ~ eps B(lambda_b, T)``.

    ``eps`` is profiled out in closed form; ``T`` is scanned on a coarse grid
    and refined by golden section on the bracketing grid cells. A final
    Levenberg-Marquardt polish in (T, eps) tightens the optimum beyond the
    golden-section tolerance. ``residual`` is the relative misfit
    ``||r - eps B|| / ||r||``.
    """
    r = np.asarray(radiances, dtype=float).ravel()
    lam = np.asarray(wavelengths, dtype=float).ravel()
    if r.size != lam.size:
        raise ValidationError("radiances and wavelengths differ in length")
    if r.size < 2:
        raise ValidationError("graybody fitting needs at least 2 bands")
    if not np.all(np.isfinite(r)):
        raise ValidationError("radiances must be finite")
    if np.all(r == 0):
        raise ValidationError("all radiances are zero: no emitter")
    lo, hi, step = t_grid
    grid = np.arange(lo, hi + 0.5 * step, step)
    # work in units of the largest radiance; the fit is scale-equivariant
    scale = float(np.max(np.abs(r)))
    rn = r / scale
    sse = np.array([_sse(rn, lam, T) for T in grid])
    i = int(np.argmin(sse))
    T = golden_section(lambda t: _sse(rn, lam, t), grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)], tol)
    e = _eps_of(rn, planck_radiance(lam, T))
    if polish and e > 0:
        T, e = _polish(rn, lam, T, e, lo, hi)
    B = planck_radiance(lam, T)
    eps_raw = e * scale
    resid = float(np.linalg.norm(r - eps_raw * B) / np.linalg.norm(r))
    if not (np.isfinite(T) and np.isfinite(eps_raw)):
        raise NumericalError("graybody fit did not converge")
    eps = min(eps_raw, 1.0)
    if eps <= 0:
        raise NumericalError("graybody fit produced a non-positive emission factor")
    return GraybodyFit(float(T), float(eps), float(eps_raw), resid)


def _polish(rn, lam, T0, e0, lo, hi):
    B0 = planck_radiance(lam, T0)

    def res(x):
        # x = (T offset in K, relative eps change)
        return e0 * (1.0 + x[1]) * planck_radiance(lam, T0 + x[0]) - rn

    try:
        sol = optimize.least_squares(res, np.zeros(2), method="lm", x_scale=np.array([1.0, 1e-3]), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    except (ValueError, FloatingPointError):
        return T0, e0
    T1, e1 = T0 + sol.x[0], e0 * (1.0 + sol.x[1])
    if not (lo <= T1 <= hi and e1 > 0 and np.sum(sol.fun**2) <= np.sum((e0 * B0 - rn) ** 2)):
        return T0, e0
    return float(T1), float(e1)


def characterize(radiances, wavelengths, pixel_area, lat, lon, **fit_kw):
    """HotSource from one pixel's per-band radiances."""
    fit = fit_graybody(radiances, wavelengths, **fit_kw)
    S = source_area(fit.epsilon, pixel_area)
    return HotSource(float(lat), float(lon), fit.T, fit.epsilon, S, radiant_heat(fit.T, S))


# ---------------------------------------------------------------- pipeline


def run_pipeline(images, k=4.0, robust=False, min_bands=2, atmospheric=None, t_grid=T_GRID):
    """Detect, filter and characterize hot sources over co-registered bands.

    Each band's background location is subtracted from pixel values before
    fitting; ``atmospheric`` optionally maps band id to a multiplicative
    correction. Sources are returned in (row, col) order.
    """
    images = list(images)
    if len(images) < 2:
        raise ValidationError("the pipeline needs at least 2 bands")
    shape = images[0].values.shape
    if any(im.values.shape != shape for im in images):
        raise ValidationError("band images must share one pixel grid")
    atmospheric = atmospheric or {}
    hot = coincidence_filter([detect_hot_pixels(im, k, robust) for im in images], min_bands)
    lam = np.array([im.wavelength_m for im in images])
    loc = np.array([background(im.values, robust)[0] for im in images])
    gain = np.array([float(atmospheric.get(im.band, 1.0)) for im in images])
    ref = images[0]
    out = []
    for row, col in sorted(hot):
        r = (np.array([im.values[row, col] for im in images]) - loc) * gain
        lat, lon = ref.pixel_latlon(row, col)
        try:
            out.append(characterize(r, lam, ref.pixel_area_m2, lat, lon, t_grid=t_grid))
        except (ValidationError, NumericalError):
            continue
    return out


def synthetic_scene(
    rng,
    shape=(64, 64),
    wavelengths=(1.24e-6, 1.61e-6, 2.25e-6, 3.7e-6),
    sources=((20, 30, 1800.0, 1e-2),),
    noise_sd=None,
    pixel_area=375.0**2,
    geotransform=(-103.5, 0.004, 0.0, 48.2, 0.0, -0.004),
):
    """Noisy multi-band scene with graybody point sources ``(row, col, T, eps)``.

    Noise defaults to a small fraction of the weakest source signal per band so
    sources sit far above the detection threshold.
    """
    images = []
    for j, lam in enumerate(wavelengths):
        grid = np.zeros(shape)
        signals = []
        for row, col, T, eps in sources:
            s = eps * float(planck_radiance(lam, T))
            grid[row, col] += s
            signals.append(s)
        sd = noise_sd if noise_sd is not None else (1e-3 * min(signals) if signals else 1.0)
        grid = grid + sd * rng.standard_normal(shape)
        images.append(BandImage(f"M{j + 1}", lam, grid, pixel_area, geotransform))
    return images


# ---------------------------------------------------------------- clustering


@dataclass(frozen=True)
class Clustering:
    labels: np.ndarray
    n_clusters: int

    def sizes(self):
        return np.bincount(self.labels[self.labels >= 0], minlength=self.n_clusters)

    def histogram(self):
        """Cluster size -> number of clusters of that size."""
        return dict(sorted(Counter(self.sizes().tolist()).items()))

    @property
    def n_noise(self):
        return int(np.sum(self.labels == NOISE))


def cluster_detections(lat, lon, eps_m, min_pts, radius=R_EARTH_M):
    """DBSCAN under great-circle distance.

    Core points have at least ``min_pts`` neighbours within ``eps_m``
    (counting themselves). Clusters are connected components of the core
    graph; a border point joins the cluster of its nearest core point. Labels
    are numbered by each cluster's southernmost-westernmost member, so the
    result does not depend on input order. Noise is labelled -1.
    """
    if not eps_m > 0:
        raise ValidationError("eps_m must be positive")
    if min_pts < 1:
        raise ValidationError("min_pts must be at least 1")
    lat = np.asarray(lat, dtype=float).ravel()
    lon = np.asarray(lon, dtype=float).ravel()
    n = lat.size
    if n == 0:
        return Clustering(np.empty(0, dtype=int), 0)
    xyz = _unit_vectors(lat, lon)
    chord = 2.0 * math.sin(min(eps_m / (2.0 * radius), math.pi / 2))
    pairs = cKDTree(xyz).query_pairs(chord * (1 + 1e-12), output_type="ndarray")
    if pairs.size:
        # exact haversine check on chord candidates
        d = haversine_m(lat[pairs[:, 0]], lon[pairs[:, 0]], lat[pairs[:, 1]], lon[pairs[:, 1]], radius)
        keep = d <= eps_m
        pairs, d = pairs[keep], d[keep]
    else:
        d = np.empty(0)
    deg = np.ones(n, dtype=int) + np.bincount(pairs.ravel(), minlength=n)
    core = deg >= min_pts
    labels = np.full(n, NOISE, dtype=int)
    if not core.any():
        return Clustering(labels, 0)
    both = core[pairs[:, 0]] & core[pairs[:, 1]]
    cp = pairs[both]
    adj = csr_matrix((np.ones(len(cp)), (cp[:, 0], cp[:, 1])), shape=(n, n))
    _, comp = connected_components(adj, directed=False)
    labels[core] = comp[core]
    # border points: nearest core neighbour, ties to the smaller component key
    best = np.full(n, np.inf)
    for (i, j), dij in zip(pairs, d):
        for a, b in ((i, j), (j, i)):
            if not core[a] and core[b] and (dij, comp[b]) < (best[a], labels[a] if labels[a] >= 0 else np.inf):
                best[a], labels[a] = dij, comp[b]
    # canonical renumbering
    order = np.lexsort((lon, lat))
    remap, nxt = {}, 0
    for i in order:
        c = labels[i]
        if c >= 0 and c not in remap:
            remap[c] = nxt
            nxt += 1
    labels = np.array([remap[c] if c >= 0 else NOISE for c in labels], dtype=int)
    return Clustering(labels, nxt)


# ---------------------------------------------------------------- I/O


def load_band(path, sidecar=None):
    """Band image from a CSV grid or flat float64 binary plus JSON sidecar.

    The sidecar holds ``band``, ``wavelength_m``, ``pixel_area_m2`` and
    ``geotransform``; binary grids also need ``rows`` and ``cols``. It
    defaults to ``<path>.json``.
    """
    sidecar = sidecar or f"{path}.json"
    with open(sidecar, encoding="utf-8") as fh:
        meta = json.load(fh)
    for key in ("band", "wavelength_m", "pixel_area_m2"):
        if key not in meta:
            raise ValidationError(f"sidecar {sidecar} is missing {key!r}")
    if str(path).lower().endswith(".csv"):
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    else:
        if "rows" not in meta or "cols" not in meta:
            raise ValidationError("binary band grids need 'rows' and 'cols' in the sidecar")
        values = np.fromfile(path, dtype="<f8")
        if values.size != meta["rows"] * meta["cols"]:
            raise ValidationError(f"{path}: expected {meta['rows'] * meta['cols']} values, found {values.size}")
        values = values.reshape(meta["rows"], meta["cols"])
    gt = meta.get("geotransform", (0.0, 1.0, 0.0, 0.0, 0.0, -1.0))
    return BandImage(str(meta["band"]), float(meta["wavelength_m"]), values, float(meta["pixel_area_m2"]), tuple(gt))


def save_band(img, path):
    """Write ``img`` as a CSV grid with its JSON sidecar."""
    np.savetxt(path, img.values, delimiter=",", fmt="%.17g")
    meta = {
        "band": img.band,
        "wavelength_m": img.wavelength_m,
        "pixel_area_m2": img.pixel_area_m2,
        "geotransform": list(img.geotransform),
    }
    with open(f"{path}.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    return os.fspath(path)


def write_detections_csv(sources, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DETECTION_COLUMNS)
        for s in sources:
            w.writerow([repr(float(v)) for v in (s.lat, s.lon, s.T, s.epsilon, s.S, s.RH)])
