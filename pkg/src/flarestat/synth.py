"""Synthetic inputs: model-generated data and a small North Dakota-like world.

Everything here is seeded through ``numpy.random.Generator`` so that files
written by :func:`write_world` are byte-identical for a given seed.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import nightfire
from .data import BCM_PER_MCF, FlareDetection, MonthStamp, WellRecord, write_ndic_csv, write_viirs_csv
from .models.records import COUNTY_TABLE

STATE_GENERATORS = {"alpha": 0.061, "beta": 0.535, "sigma": 0.030}
NEGBIN_GENERATORS = {"mu": 1.005, "phi": 0.168}
BBOX = (-104.0, 46.5, -100.0, 49.0)  # lon0, lat0, lon1, lat1
SECTION_DLAT = 0.0145
SECTION_DLON = 0.0215
M_PER_DEG_LAT = 111_195.0


# ---------------------------------------------------------------- model generators


def state_data(rng, n=44, alpha=0.061, beta=0.535, sigma=0.030, viirs_range=(0.05, 0.4)):
    """``(viirs, ndic)`` from the state linear model."""
    viirs = rng.uniform(*viirs_range, size=n)
    return viirs, alpha + beta * viirs + sigma * rng.standard_normal(n)


def county_data(rng, sizes, mu_alpha=0.02, mu_beta=0.6, sd_alpha=0.01, sd_beta=0.15, sigma=0.02, rho=0.0, viirs_range=(0.005, 0.08)):
    """``(idx, viirs, ndic, alpha, beta)`` for counties with ``sizes`` observations.

    ``viirs_range`` is one ``(lo, hi)`` pair or one pair per county.
    """
    k = len(sizes)
    cov = np.array([[sd_alpha**2, rho * sd_alpha * sd_beta], [rho * sd_alpha * sd_beta, sd_beta**2]])
    ab = rng.multivariate_normal([mu_alpha, mu_beta], cov, size=k)
    alpha, beta = np.abs(ab[:, 0]), ab[:, 1]
    idx = np.repeat(np.arange(k), sizes)
    bounds = np.broadcast_to(np.asarray(viirs_range, dtype=float), (k, 2))[idx]
    viirs = rng.uniform(bounds[:, 0], bounds[:, 1])
    ndic = alpha[idx] + beta[idx] * viirs + sigma * rng.standard_normal(idx.size)
    return idx, viirs, ndic, alpha, beta


def negbin_counts(rng, n=506, mu=1.005, phi=0.168):
    """Gamma-Poisson draws with mean ``mu`` and dispersion ``phi``."""
    return rng.negative_binomial(phi, phi / (phi + mu), size=n)


def gmm_data(rng, n=200, weights=(0.5, 0.5), means=(-6.0, 0.0), sds=(0.7, 0.7)):
    z = rng.choice(len(weights), size=n, p=np.asarray(weights) / np.sum(weights))
    return np.asarray(means)[z] + np.asarray(sds)[z] * rng.standard_normal(n)


# ---------------------------------------------------------------- world


def _rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]


def _feature(fid, ring, **props):
    return {"type": "Feature", "properties": {"id": fid, **props}, "geometry": {"type": "Polygon", "coordinates": [ring]}}


def county_layer():
    """12 rectangular counties on a 3 x 4 grid, tagged NAD27."""
    lon0, lat0, lon1, lat1 = BBOX
    dx, dy = (lon1 - lon0) / 4, (lat1 - lat0) / 3
    feats = []
    for n, (abbr, name) in enumerate(COUNTY_TABLE):
        r, c = divmod(n, 4)
        ring = _rect(lon0 + c * dx, lat0 + r * dy, lon0 + (c + 1) * dx, lat0 + (r + 1) * dy)
        feats.append(_feature(abbr, ring, kind="county", name=name))
    return {"type": "FeatureCollection", "datum": "NAD27", "features": feats}


def oilfield_layer():
    """Six oilfields covering the middle of the state, leaving gaps at the edges."""
    lon0, lat0, lon1, lat1 = BBOX
    dx, dy = (lon1 - lon0) / 3, (lat1 - lat0) / 2
    feats = []
    for n in range(6):
        r, c = divmod(n, 3)
        x0, y0 = lon0 + c * dx, lat0 + r * dy
        ring = _rect(x0 + 0.1 * dx, y0 + 0.1 * dy, x0 + 0.9 * dx, y0 + 0.9 * dy)
        feats.append(_feature(f"FIELD-{n + 1}", ring, kind="oilfield"))
    return {"type": "FeatureCollection", "datum": "NAD27", "features": feats}


def _section_cell(lat, lon):
    lon0, lat0, _, _ = BBOX
    return int((lat - lat0) // SECTION_DLAT), int((lon - lon0) // SECTION_DLON)


def section_layer(cells):
    """Survey sections (about one square mile) for the given ``(row, col)`` cells, in WGS84."""
    lon0, lat0, _, _ = BBOX
    feats = []
    for r, c in sorted(cells):
        ring = _rect(lon0 + c * SECTION_DLON, lat0 + r * SECTION_DLAT, lon0 + (c + 1) * SECTION_DLON, lat0 + (r + 1) * SECTION_DLAT)
        feats.append(_feature(f"T{r // 6:03d}-R{c // 6:03d}-S{(r % 6) * 6 + c % 6 + 1:02d}", ring, kind="trs-section", township=r // 6, range=c // 6))
    return {"type": "FeatureCollection", "datum": "WGS84", "features": feats}


def _county_of(lat, lon):
    lon0, lat0, lon1, lat1 = BBOX
    c = int((lon - lon0) // ((lon1 - lon0) / 4))
    r = int((lat - lat0) // ((lat1 - lat0) / 3))
    return COUNTY_TABLE[r * 4 + c][0]


def world(seed=0, n_months=44, start="2015-01", n_pads=36, wells_per_pad=4, detections_per_month=25, **gen):
    """A synthetic state: VIIRS detections, NDIC well rows and polygon layers.

    Monthly NDIC flared totals follow the state linear model applied to the
    monthly VIIRS totals (``gen`` overrides the generator values). Detections
    sit near well pads at a mix of short, mid-range and far offsets.
    """
    g = {**STATE_GENERATORS, **gen}
    rng = np.random.default_rng(seed)
    lon0, lat0, lon1, lat1 = BBOX
    first = MonthStamp.parse(start)
    months = [first.shift(i) for i in range(n_months)]

    # pads kept away from county edges so each pad has one county
    dx, dy = (lon1 - lon0) / 4, (lat1 - lat0) / 3
    cell = rng.integers(0, 12, size=n_pads)
    pad_lon = lon0 + (cell % 4 + rng.uniform(0.15, 0.85, n_pads)) * dx
    pad_lat = lat0 + (cell // 4 + rng.uniform(0.15, 0.85, n_pads)) * dy
    operators = [f"OP-{chr(65 + i % 8)}" for i in range(n_pads)]

    wells = []
    for p in range(n_pads):
        for w in range(wells_per_pad):
            dlat = rng.normal(0, 60) / M_PER_DEG_LAT
            dlon = rng.normal(0, 60) / (M_PER_DEG_LAT * np.cos(np.radians(pad_lat[p])))
            lat, lon = pad_lat[p] + dlat, pad_lon[p] + dlon
            wells.append((f"W{p:03d}{w:02d}", operators[p], _county_of(lat, lon), float(lat), float(lon), p))

    t = np.arange(n_months)
    viirs_tot = 0.25 + 0.08 * np.sin(2 * np.pi * t / 12) + 0.002 * t + 0.02 * rng.standard_normal(n_months)
    viirs_tot = np.clip(viirs_tot, 0.05, None)
    ndic_tot = np.clip(g["alpha"] + g["beta"] * viirs_tot + g["sigma"] * rng.standard_normal(n_months), 1e-3, None)

    viirs_rows, ndic_rows = [], []
    for i, m in enumerate(months):
        k = max(int(rng.poisson(detections_per_month)), 3)
        share = rng.dirichlet(np.full(k, 2.0))
        pads = rng.integers(0, n_pads, size=k)
        # offsets: mostly close, some mid-range, a few far
        dist = rng.choice([80.0, 550.0, 1500.0], size=k, p=[0.75, 0.17, 0.08]) * rng.uniform(0.6, 1.2, size=k)
        bearing = rng.uniform(0, 2 * np.pi, size=k)
        for j in range(k):
            lat = pad_lat[pads[j]] + dist[j] * np.cos(bearing[j]) / M_PER_DEG_LAT
            lon = pad_lon[pads[j]] + dist[j] * np.sin(bearing[j]) / (M_PER_DEG_LAT * np.cos(np.radians(pad_lat[pads[j]])))
            viirs_rows.append(FlareDetection(m, round(float(lat), 6), round(float(lon), 6), float(viirs_tot[i] * share[j])))

        active = rng.random(len(wells)) < 0.95
        active[rng.integers(len(wells))] = True
        flaring = active & (rng.random(len(wells)) < 0.6)
        if not flaring.any():
            flaring[np.flatnonzero(active)[0]] = True
        oil = rng.gamma(2.0, 4000.0, size=len(wells))
        gas = oil * rng.uniform(1.0, 2.5, size=len(wells))
        fshare = np.where(flaring, rng.gamma(2.0, 1.0, size=len(wells)), 0.0)
        fshare /= fshare.sum()
        flared = ndic_tot[i] / BCM_PER_MCF * fshare
        for w, (wid, op, county, lat, lon, p) in enumerate(wells):
            if not active[w]:
                continue
            ndic_rows.append(
                WellRecord(
                    m, wid, op, "", county, round(lat, 6), round(lon, 6),
                    round(float(oil[w]), 3), round(float(max(gas[w], flared[w])), 3), round(float(flared[w]), 3),
                )
            )

    cells = set()
    for p in range(n_pads):
        r, c = _section_cell(pad_lat[p], pad_lon[p])
        cells |= {(r + a, c + b) for a in (-1, 0, 1) for b in (-1, 0, 1)}
    return {
        "viirs": viirs_rows,
        "ndic": ndic_rows,
        "counties": county_layer(),
        "oilfields": oilfield_layer(),
        "sections": section_layer(cells),
    }


def write_world(outdir, seed=0, n_months=44, bands=True, **kw):
    """Write the synthetic world to ``outdir``; returns the file map."""
    os.makedirs(outdir, exist_ok=True)
    w = world(seed, n_months, **kw)
    paths = {
        "viirs": os.path.join(outdir, "viirs.csv"),
        "ndic": os.path.join(outdir, "ndic.csv"),
        "counties": os.path.join(outdir, "counties.geojson"),
        "oilfields": os.path.join(outdir, "oilfields.geojson"),
        "sections": os.path.join(outdir, "sections.geojson"),
    }
    write_viirs_csv(w["viirs"], paths["viirs"])
    write_ndic_csv(w["ndic"], paths["ndic"])
    for key in ("counties", "oilfields", "sections"):
        with open(paths[key], "w", encoding="utf-8") as fh:
            json.dump(w[key], fh, indent=1)
    if bands:
        rng = np.random.default_rng([seed, 1])
        sources = ((12, 20, 1800.0, 1e-2), (40, 33, 1650.0, 4e-3), (41, 33, 1650.0, 4e-3))
        for img in nightfire.synthetic_scene(rng, shape=(48, 48), sources=sources):
            path = os.path.join(outdir, f"band_{img.band}.csv")
            nightfire.save_band(img, path)
            paths[f"band_{img.band}"] = path
    return paths
