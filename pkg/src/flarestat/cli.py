"""Batch command-line interface.

Every command reads files, writes files under ``--out`` and returns an exit
code: 0 on success, 1 for invalid input or usage, 2 for numerical failure or
when any parameter's split R-hat reaches 1.05.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from collections import defaultdict

import numpy as np

from . import __version__, data, geo, nightfire, synth
from .errors import ConvergenceError, FlareStatError, NumericalError, ValidationError
from .models import (
    GP_KINDS,
    CountyRegistry,
    compare_models,
    fit_county_hierarchical,
    fit_gmm,
    fit_gp_series,
    fit_negbin_counts,
    fit_state_linear,
    forecast_latent,
    percentile_bands,
    posterior_predictive,
    write_bands_csv,
)
from .sampler import SamplerConfig, Trace, split_rhat, summarize, write_summary_csv

log = logging.getLogger("flarestat")

RHAT_LIMIT = 1.05
DEFAULTS = {
    "seed": 0,
    "chains": 4,
    "warmup": 1000,
    "draws": 1000,
    "out": "out",
    "prob": 0.90,
    "horizon": 6,
    "datasets": 100,
    "d_secure": geo.D_SECURE_M,
    "d_cutoff": geo.D_CUTOFF_M,
    "level": "section",
    "mode": "levels",
    "k": "2",
    "parameterization": "noncentered",
    "eps_m": 750.0,
    "min_pts": 1,
    "threshold": 4.0,
    "months": 44,
}
INT_KEYS = {"seed", "chains", "warmup", "draws", "horizon", "datasets", "min_pts", "months"}
FLOAT_KEYS = {"prob", "d_secure", "d_cutoff", "eps_m", "threshold"}


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _global_flags(p):
    S = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=S, help="master seed (default 0)")
    p.add_argument("--chains", type=int, default=S, help="chains (default 4)")
    p.add_argument("--warmup", type=int, default=S, help="warmup iterations per chain (default 1000)")
    p.add_argument("--draws", type=int, default=S, help="kept draws per chain (default 1000)")
    p.add_argument("--out", default=S, help="output directory (default ./out)")
    p.add_argument("--config", default=S, help="key=value file; command-line flags win")
    p.add_argument("-v", "--verbose", action="store_true", default=S)


def build_parser():
    S = argparse.SUPPRESS
    parser = _Parser(prog="flarestat", description="Bayesian analytics for gas-flaring data.")
    parser.add_argument("--version", action="version", version=f"flarestat {__version__}")
    _global_flags(parser)
    common = _Parser(add_help=False)
    _global_flags(common)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic VIIRS/NDIC world")
    p.add_argument("--months", type=int, default=S)

    p = sub.add_parser("ingest", parents=[common], help="parse CSVs and build the monthly state series")
    p.add_argument("--viirs", required=True)
    p.add_argument("--ndic", required=True)

    p = sub.add_parser("geocode", parents=[common], help="label detections with county/oilfield polygons")
    p.add_argument("--viirs", required=True)
    p.add_argument("--ndic", required=True)
    p.add_argument("--layers", nargs="+", required=True, help="GeoJSON polygon layers")

    p = sub.add_parser("correlate", parents=[common], help="pairwise Spearman correlations")
    p.add_argument("--data", required=True, help="monthly series CSV")
    p.add_argument("--mode", choices=("levels", "lag1"), default=S)
    p.add_argument("--columns", nargs="+")

    p = sub.add_parser("fit", parents=[common], help="fit a model with NUTS")
    p.add_argument("model", help="state | county | gp:<kind> | negbin | gmm")
    p.add_argument("--data", required=True)
    p.add_argument("--column", help="value column for negbin/gmm")
    p.add_argument("--k", default=S, help="GMM components: K or a range such as 1-4")
    p.add_argument("--negbin", action="store_true", help="negative-binomial likelihood for gp:detection_count")
    p.add_argument("--parameterization", choices=("centered", "noncentered"), default=S)
    p.add_argument("--prob", type=float, default=S)

    for name, extra, helptext in (
        ("predict", ("--horizon", int), "forecast a fitted GP series"),
        ("ppc", ("--datasets", int), "posterior predictive check"),
        ("summarize", ("--prob", float), "posterior summary table"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("model", help="model spec used with fit (gmm needs --k)")
        p.add_argument("--k", default=S)
        p.add_argument(extra[0], type=extra[1], default=S)

    p = sub.add_parser("attribute", parents=[common], help="nearest-well flare owner assignment")
    p.add_argument("--viirs", required=True)
    p.add_argument("--ndic", required=True)
    p.add_argument("--sections", help="GeoJSON survey sections")
    p.add_argument("--d-secure", dest="d_secure", type=float, default=S)
    p.add_argument("--d-cutoff", dest="d_cutoff", type=float, default=S)
    p.add_argument("--level", choices=geo.SECTION_LEVELS, default=S)

    p = sub.add_parser("nightfire", parents=[common], help="hot-source detection on band images")
    p.add_argument("--bands", nargs="+", required=True, help="band grids (CSV or binary) with JSON sidecars")
    p.add_argument("--threshold", type=float, default=S, help="hot-pixel sd multiplier (default 4)")
    p.add_argument("--robust", action="store_true", help="median/MAD background")
    p.add_argument("--eps-m", dest="eps_m", type=float, default=S)
    p.add_argument("--min-pts", dest="min_pts", type=int, default=S)
    return parser


def read_config(path):
    """``key = value`` lines; ``#`` starts a comment; keys may use - or _."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{n}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            out[key] = value.strip("\"'")
    return out


def _coerce(key, value):
    try:
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ValidationError(f"config value for {key!r} is not a number: {value!r}") from None
    return value


def resolve_options(ns):
    opts = dict(DEFAULTS)
    if "config" in vars(ns):
        opts.update({k: _coerce(k, v) for k, v in read_config(ns.config).items()})
    opts.update({k: v for k, v in vars(ns).items() if k != "config"})
    return argparse.Namespace(**opts)


# ---------------------------------------------------------------- helpers


def _cfg(a):
    return SamplerConfig(chains=a.chains, warmup_iters=a.warmup, draw_iters=a.draws, seed=a.seed)


def _path(a, name):
    os.makedirs(a.out, exist_ok=True)
    return os.path.join(a.out, name)


def _write_text(path, lines):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_k(text):
    text = str(text)
    if "-" in text:
        lo, hi = text.split("-", 1)
        ks = list(range(int(lo), int(hi) + 1))
    else:
        ks = [int(t) for t in text.split(",")]
    if not ks:
        raise ValidationError("empty --k")
    return ks


def _model_name(spec, k=None):
    if spec == "gmm":
        return f"gmm_k{k}"
    return spec.replace(":", "_")


def _check_spec(spec):
    if spec in ("state", "county", "negbin", "gmm"):
        return
    if spec.startswith("gp:") and spec[3:] in GP_KINDS:
        return
    raise ValidationError(f"unknown model {spec!r}; expected state, county, gp:<{'|'.join(GP_KINDS)}>, negbin or gmm")


def _read_column(path, column):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise ValidationError(f"{path} has no column {column!r}")
        out = []
        for row, rec in enumerate(reader, start=1):
            try:
                out.append(float(rec[column]))
            except ValueError:
                raise data.DataError(f"{rec[column]!r} is not a number", row, column) from None
    return np.asarray(out, dtype=float)


def _read_county_csv(path, registry):
    idx, viirs, ndic = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for col in ("county", "month", "viirs_bcm", "ndic_bcm"):
            if col not in (reader.fieldnames or []):
                raise ValidationError(f"{path} has no column {col!r}")
        for row, rec in enumerate(reader, start=1):
            try:
                idx.append(registry.index_of(rec["county"]))
            except ValidationError:
                raise data.DataError(f"unknown county {rec['county']!r}", row, "county") from None
            viirs.append(data._num(rec, "viirs_bcm", row, 0))
            ndic.append(data._num(rec, "ndic_bcm", row, 0))
    return np.asarray(idx), np.asarray(viirs), np.asarray(ndic)


def _inputs(spec, manifest, base):
    """Reload what a model was fitted on; returns the posterior-predictive data dict."""
    path = os.path.join(base, manifest["data"])
    if spec == "state":
        s = data.read_series_csv(path)
        return {"viirs": s["viirs_bcm"], "ndic": s["ndic_bcm"], "observed": s["ndic_bcm"]}
    if spec == "county":
        idx, viirs, ndic = _read_county_csv(path, CountyRegistry())
        return {"idx": idx, "viirs": viirs, "ndic": ndic, "observed": ndic}
    if spec == "negbin":
        counts = _read_column(path, manifest["column"])
        return {"counts": counts, "observed": counts}
    if spec == "gmm":
        x = _gmm_values(path, manifest["column"])[0]
        return {"x": x, "observed": x}
    kind = spec[3:]
    ent = data.series_entity(data.read_series_csv(path), kind)
    d = {f: getattr(ent, f) for f in ("flared", "gas", "oil", "wells", "flaring_wells", "detections", "viirs", "ndic")}
    d["x"] = ent.x
    d["observed"] = {
        "gas_proportion": ent.flared,
        "boe_proportion": ent.flared,
        "well_proportion": ent.flaring_wells,
        "detection_count": ent.detections,
        "scale_factor": ent.ndic,
    }[kind]
    return d


def _gmm_values(path, column):
    vols, excluded = data.exclude_nonpositive(_read_column(path, column))
    return data.log_magnitude(vols), excluded


def _rhat_failures(trace):
    bad = []
    for label, arr in trace.scalar_columns(include_deterministic=False):
        r = split_rhat(arr)
        if not math.isnan(r) and r >= RHAT_LIMIT:
            bad.append((label, r))
    return bad


def _save_fit(a, name, spec, trace, manifest):
    trace_path = _path(a, f"trace_{name}.json")
    trace.save(trace_path)
    write_summary_csv(summarize(trace, a.prob), _path(a, f"summary_{name}.csv"))
    manifest = {"model": spec, **manifest, "data": os.path.relpath(manifest["data"], a.out)}
    with open(_path(a, f"fit_{name}.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return trace_path


def _load_fit(a, spec):
    _check_spec(spec)
    k = _parse_k(a.k)[0] if spec == "gmm" else None
    name = _model_name(spec, k)
    mpath = os.path.join(a.out, f"fit_{name}.json")
    if not os.path.exists(mpath):
        raise ValidationError(f"no fit found for {spec!r} (expected {mpath}); run fit first")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    return name, manifest, Trace.load(os.path.join(a.out, f"trace_{name}.json"))


# ---------------------------------------------------------------- commands


def cmd_synth(a):
    paths = synth.write_world(a.out, seed=a.seed, n_months=a.months)
    _write_text(_path(a, "report_synth.txt"), [f"{k}: {os.path.basename(v)}" for k, v in paths.items()])
    return 0


def cmd_ingest(a):
    viirs = data.parse_viirs_csv(a.viirs)
    wells = data.parse_ndic_csv(a.ndic)
    series = data.state_series(viirs, wells)
    data.write_series_csv(series, _path(a, "series_state.csv"))
    _write_text(
        _path(a, "report_ingest.txt"),
        [
            f"viirs detections: {len(viirs)}",
            f"ndic well rows: {len(wells)}",
            f"months: {series.months[0]} to {series.months[-1]} ({len(series)})",
        ],
    )
    return 0


def cmd_geocode(a):
    viirs = data.parse_viirs_csv(a.viirs)
    wells = data.parse_ndic_csv(a.ndic)
    layers = [p for path in a.layers for p in geo.load_geojson(path)]
    labels = geo.reverse_geocode([geo.GeoPoint(d.lat, d.lon) for d in viirs], layers)
    county = [geo.first_label(lb, "county") for lb in labels]
    field = [geo.first_label(lb, "oilfield") for lb in labels]
    with open(_path(a, "viirs_geocoded.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.VIIRS_COLUMNS + ("county", "oilfield"))
        for d, c, f in zip(viirs, county, field):
            w.writerow([str(d.month), repr(d.lat), repr(d.lon), repr(d.volume_bcm), c or "", f or ""])
    rows = data.county_rows(zip(viirs, county), wells)
    with open(_path(a, "county_monthly.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("county", "month", "viirs_bcm", "ndic_bcm"))
        for c, m, v, n in rows:
            w.writerow([c, str(m), repr(v), repr(n)])
    vol, cnt = defaultdict(float), defaultdict(int)
    for d, f in zip(viirs, field):
        if f is not None:
            vol[f] += d.volume_bcm
            cnt[f] += 1
    with open(_path(a, "oilfield_volumes.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("oilfield", "volume_bcm", "detections"))
        for f in sorted(vol, key=geo._id_key):
            w.writerow([f, repr(vol[f]), cnt[f]])
    _write_text(
        _path(a, "report_geocode.txt"),
        [
            f"detections: {len(viirs)}",
            f"without county: {sum(c is None for c in county)}",
            f"without oilfield: {sum(f is None for f in field)}",
            f"county-months: {len(rows)}",
        ],
    )
    return 0


def cmd_correlate(a):
    s = data.read_series_csv(a.data)
    cols = a.columns or [c for c in s.columns if np.all(np.isfinite(s[c])) and np.ptp(s[c]) > 0]
    for c in cols:
        if c not in s.columns:
            raise ValidationError(f"{a.data} has no column {c!r}")
    rows = data.correlation_matrix({c: (s.months, s[c]) for c in cols}, a.mode)
    data.write_correlation_csv(rows, _path(a, f"correlation_{a.mode}.csv"))
    return 0


def cmd_fit(a):
    spec = a.model
    _check_spec(spec)
    cfg = _cfg(a)
    report = []
    if spec == "gmm":
        column = a.column or "volume_bcm"
        x, excluded = _gmm_values(a.data, column)
        report.append(f"zero-volume records excluded: {excluded}")
        fits = {}
        for k in _parse_k(a.k):
            fit = fit_gmm(x, k, cfg)
            fits[f"gmm_k{k}"] = fit.trace
            _save_fit(a, f"gmm_k{k}", spec, fit.trace, {"data": a.data, "column": column, "k": k})
        if len(fits) > 1:
            with open(_path(a, "waic_comparison.csv"), "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("model", "waic", "se", "p_waic", "d_waic", "d_se"))
                for r in compare_models(fits):
                    w.writerow([r.name, repr(r.waic), repr(r.se), repr(r.p_waic), repr(r.d_waic), repr(r.d_se)])
        traces = fits
    else:
        name = _model_name(spec)
        manifest = {"data": a.data}
        if spec == "state":
            s = data.read_series_csv(a.data)
            trace = fit_state_linear((s["viirs_bcm"], s["ndic_bcm"]), cfg)
        elif spec == "county":
            idx, viirs, ndic = _read_county_csv(a.data, CountyRegistry())
            trace = fit_county_hierarchical((idx, viirs, ndic), a.parameterization, cfg)
            manifest["parameterization"] = a.parameterization
        elif spec == "negbin":
            manifest["column"] = a.column or "detections"
            trace = fit_negbin_counts(_read_column(a.data, manifest["column"]), cfg)
        else:
            kind = spec[3:]
            ent = data.series_entity(data.read_series_csv(a.data), kind)
            trace = fit_gp_series(ent, kind, cfg, negbin=bool(a.negbin))
            manifest["negbin"] = bool(a.negbin)
        _save_fit(a, name, spec, trace, manifest)
        traces = {name: trace}
    status = 0
    for name, trace in traces.items():
        bad = _rhat_failures(trace)
        report.append(f"{name}: divergences {trace.divergences}")
        if bad:
            listing = ", ".join(f"{lab} ({r:.3f})" for lab, r in bad)
            report.append(f"{name}: R-hat >= {RHAT_LIMIT}: {listing}")
            print(f"error: {name} did not converge; R-hat >= {RHAT_LIMIT} for {listing}", file=sys.stderr)
            status = 2
    _write_text(_path(a, f"report_fit_{_model_name(spec) if spec != 'gmm' else 'gmm'}.txt"), report)
    return status


def cmd_predict(a):
    spec = a.model
    if not spec.startswith("gp:"):
        raise ValidationError("predict forecasts GP series models (gp:<kind>)")
    name, manifest, trace = _load_fit(a, spec)
    if trace.chains * trace.draws < 100:
        raise ValidationError("forecast bands need at least 100 posterior draws")
    grid, samples = forecast_latent(trace, spec[3:], horizon=a.horizon, seed=a.seed)
    write_bands_csv(percentile_bands(samples, grid), _path(a, f"forecast_{name}.csv"))
    return 0


def cmd_ppc(a):
    name, manifest, trace = _load_fit(a, a.model)
    d = _inputs(a.model, manifest, a.out)
    kind = "gmm" if a.model == "gmm" else a.model if not a.model.startswith("gp:") else a.model[3:]
    sims = posterior_predictive(trace, kind, a.datasets, d, seed=a.seed)
    obs = np.asarray(d["observed"], dtype=float)
    lo, hi = np.percentile(sims, [5, 95], axis=0)
    with open(_path(a, f"ppc_{name}.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("index", "observed", "sim_mean", "sim_q05", "sim_q95"))
        for i in range(obs.size):
            w.writerow([i, repr(float(obs[i])), repr(float(sims[:, i].mean())), repr(float(lo[i])), repr(float(hi[i]))])
    cover = float(np.mean((obs >= lo) & (obs <= hi)))
    _write_text(_path(a, f"report_ppc_{name}.txt"), [f"datasets: {a.datasets}", f"observations inside the 90% band: {cover:.3f}"])
    return 0


def cmd_summarize(a):
    name, _, trace = _load_fit(a, a.model)
    write_summary_csv(summarize(trace, a.prob), _path(a, f"summary_{name}.csv"))
    return 0


def cmd_attribute(a):
    viirs = data.parse_viirs_csv(a.viirs)
    wells = data.group_by_month(data.parse_ndic_csv(a.ndic))
    sections = geo.load_geojson(a.sections, kind="trs-section") if a.sections else []
    out = []
    for month, dets in data.group_by_month(viirs).items():
        recs = [{"id": d.row, "lat": d.lat, "lon": d.lon} for d in dets]
        out += geo.assign_flare_owners(recs, wells.get(month, []), sections, a.d_secure, a.d_cutoff, level=a.level)
    geo.write_owners_csv(out, _path(a, "owners.csv"))
    tally = defaultdict(int)
    for r in out:
        tally[r.decision] += 1
    _write_text(
        _path(a, "report_attribute.txt"),
        [f"d_secure: {a.d_secure} m", f"d_cutoff: {a.d_cutoff} m"] + [f"{k}: {tally[k]}" for k in geo.DECISIONS],
    )
    return 0


def cmd_nightfire(a):
    images = [nightfire.load_band(p) for p in a.bands]
    sources = nightfire.run_pipeline(images, k=a.threshold, robust=a.robust)
    nightfire.write_detections_csv(sources, _path(a, "nightfire_detections.csv"))
    cl = nightfire.cluster_detections([s.lat for s in sources], [s.lon for s in sources], a.eps_m, a.min_pts)
    with open(_path(a, "nightfire_clusters.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cluster_size", "clusters"))
        for size, n in cl.histogram().items():
            w.writerow([size, n])
    _write_text(_path(a, "report_nightfire.txt"), [f"sources: {len(sources)}", f"clusters: {cl.n_clusters}", f"noise: {cl.n_noise}"])
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "geocode": cmd_geocode,
    "correlate": cmd_correlate,
    "fit": cmd_fit,
    "predict": cmd_predict,
    "ppc": cmd_ppc,
    "summarize": cmd_summarize,
    "attribute": cmd_attribute,
    "nightfire": cmd_nightfire,
}


def main(argv=None):
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if not getattr(ns, "command", None):
            parser.print_usage(sys.stderr)
            print("flarestat: error: a subcommand is required", file=sys.stderr)
            return 1
        a = resolve_options(ns)
        logging.basicConfig(level=logging.INFO if getattr(a, "verbose", False) else logging.WARNING, stream=sys.stderr)
        return COMMANDS[a.command](a)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ConvergenceError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, FlareStatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
