import csv
import json

import numpy as np
import pytest

from flarestat import cli, data, geo
from flarestat.sampler import Trace

FAST = ["--chains", "2", "--warmup", "300", "--draws", "400"]


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    out = tmp_path_factory.mktemp("world")
    assert cli.main(["synth", "--seed", "4", "--months", "24", "--out", str(out)]) == 0
    assert cli.main(["ingest", "--viirs", str(out / "viirs.csv"), "--ndic", str(out / "ndic.csv"), "--out", str(out)]) == 0
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_unknown_subcommand_exits_1(capsys):
    assert cli.main(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert cli.main([]) == 1


def test_validation_errors_exit_1(world, tmp_path, capsys):
    assert cli.main(["fit", "banana", "--data", str(world / "series_state.csv"), "--out", str(tmp_path)]) == 1
    assert "unknown model" in capsys.readouterr().err
    assert cli.main(["ingest", "--viirs", str(tmp_path / "nope.csv"), "--ndic", "x", "--out", str(tmp_path)]) == 1
    assert cli.main(["predict", "gp:scale_factor", "--out", str(tmp_path)]) == 1
    assert "run fit first" in capsys.readouterr().err
    assert cli.main(["predict", "state", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "v.csv"
    bad.write_text("month,lat,lon,volume_bcm\n2015-01,47,-103,-1\n")
    assert cli.main(["ingest", "--viirs", str(bad), "--ndic", str(world / "ndic.csv"), "--out", str(tmp_path)]) == 1
    assert "volume_bcm" in capsys.readouterr().err


def test_fit_state_is_byte_identical(world, tmp_path):
    args = ["fit", "state", "--data", str(world / "series_state.csv"), "--seed", "42"] + FAST
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = (tmp_path / "a" / "trace_state.json").read_bytes(), (tmp_path / "b" / "trace_state.json").read_bytes()
    assert a == b
    assert (tmp_path / "a" / "summary_state.csv").read_bytes() == (tmp_path / "b" / "summary_state.csv").read_bytes()
    assert cli.main(args[:-6] + ["--seed", "43"] + FAST + ["--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "trace_state.json").read_bytes() != a


def test_summarize_prob_gives_5_95_quantiles(world, tmp_path):
    out = str(tmp_path)
    assert cli.main(["fit", "state", "--data", str(world / "series_state.csv")] + FAST + ["--out", out]) == 0
    assert cli.main(["summarize", "state", "--prob", "0.90", "--out", out]) == 0
    trace = Trace.load(tmp_path / "trace_state.json")
    rows = {r["param"]: r for r in read_csv(tmp_path / "summary_state.csv")}
    assert list(read_csv(tmp_path / "summary_state.csv")[0]) == ["param", "mean", "sd", "ci_lo", "ci_hi", "hdi_lo", "hdi_hi", "rhat", "ess"]
    for p in ("alpha", "beta", "sigma"):
        x = trace.flat(p)
        lo, hi = float(rows[p]["ci_lo"]), float(rows[p]["ci_hi"])
        # within one order statistic of the interpolated 5% and 95% quantiles
        assert np.quantile(x, 0.05 - 1 / x.size) <= lo <= np.quantile(x, 0.05 + 1 / x.size)
        assert np.quantile(x, 0.95 - 1 / x.size) <= hi <= np.quantile(x, 0.95 + 1 / x.size)


def test_rhat_failure_exits_2_and_names_parameter(world, tmp_path, monkeypatch, capsys):
    rng = np.random.default_rng(0)
    chains = rng.standard_normal((4, 100))
    chains[3] += 10.0
    fake = Trace.from_arrays({"alpha": chains, "beta": rng.standard_normal((4, 100)), "sigma": np.abs(rng.standard_normal((4, 100)))})
    monkeypatch.setattr(cli, "fit_state_linear", lambda *a, **k: fake)
    assert cli.main(["fit", "state", "--data", str(world / "series_state.csv"), "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "alpha" in err and "beta" not in err
    assert "R-hat" in (tmp_path / "report_fit_state.txt").read_text()


def test_attribute_defaults(world, tmp_path):
    args = ["attribute", "--viirs", str(world / "viirs.csv"), "--ndic", str(world / "ndic.csv"), "--sections", str(world / "sections.geojson")]
    assert cli.main(args + ["--out", str(tmp_path)]) == 0
    report = (tmp_path / "report_attribute.txt").read_text()
    assert "d_secure: 300.0 m" in report and "d_cutoff: 800.0 m" in report
    viirs = data.parse_viirs_csv(world / "viirs.csv")
    wells = data.group_by_month(data.parse_ndic_csv(world / "ndic.csv"))
    sections = geo.load_geojson(world / "sections.geojson")
    want = []
    for month, dets in data.group_by_month(viirs).items():
        recs = [{"id": d.row, "lat": d.lat, "lon": d.lon} for d in dets]
        want += geo.assign_flare_owners(recs, wells[month], sections, 300.0, 800.0)
    got = read_csv(tmp_path / "owners.csv")
    assert [r["decision"] for r in got] == [a.decision for a in want]
    assert cli.main(args + ["--d-secure", "50", "--out", str(tmp_path / "x")]) == 0
    assert "d_secure: 50.0 m" in (tmp_path / "x" / "report_attribute.txt").read_text()


def test_config_file_and_flag_precedence(world, tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# thresholds\nd-secure = 120\nd_cutoff = 900\n")
    base = ["attribute", "--viirs", str(world / "viirs.csv"), "--ndic", str(world / "ndic.csv"), "--config", str(cfgfile)]
    assert cli.main(base + ["--out", str(tmp_path / "a")]) == 0
    report = (tmp_path / "a" / "report_attribute.txt").read_text()
    assert "d_secure: 120.0 m" in report and "d_cutoff: 900.0 m" in report
    assert cli.main(base + ["--d-cutoff", "700", "--out", str(tmp_path / "b")]) == 0
    assert "d_cutoff: 700.0 m" in (tmp_path / "b" / "report_attribute.txt").read_text()
    cfgfile.write_text("seed = many\n")
    assert cli.main(base + ["--out", str(tmp_path / "c")]) == 1


def test_geocode_and_correlate(world, tmp_path):
    out = str(tmp_path)
    layers = [str(world / "counties.geojson"), str(world / "oilfields.geojson")]
    assert cli.main(["geocode", "--viirs", str(world / "viirs.csv"), "--ndic", str(world / "ndic.csv"), "--layers", *layers, "--out", out]) == 0
    rows = read_csv(tmp_path / "viirs_geocoded.csv")
    assert len(rows) == len(data.parse_viirs_csv(world / "viirs.csv"))
    assert all(r["county"] for r in rows)
    assert read_csv(tmp_path / "county_monthly.csv")
    for mode in ("levels", "lag1"):
        assert cli.main(["correlate", "--data", str(world / "series_state.csv"), "--mode", mode, "--out", out]) == 0
        corr = read_csv(tmp_path / f"correlation_{mode}.csv")
        assert all(-1 <= float(r["rho"]) <= 1 for r in corr)


def test_nightfire_command(world, tmp_path):
    bands = sorted(str(p) for p in world.glob("band_*.csv"))
    assert cli.main(["nightfire", "--bands", *bands, "--out", str(tmp_path)]) == 0
    det = read_csv(tmp_path / "nightfire_detections.csv")
    assert len(det) == 3
    assert (tmp_path / "report_nightfire.txt").read_text().splitlines() == ["sources: 3", "clusters: 2", "noise: 0"]


def test_negbin_fit_and_ppc(tmp_path):
    counts = tmp_path / "counts.csv"
    y = np.random.default_rng(1).poisson(3, 80)
    counts.write_text("detections\n" + "\n".join(map(str, y)) + "\n")
    out = str(tmp_path / "o")
    assert cli.main(["fit", "negbin", "--data", str(counts)] + FAST + ["--out", out]) == 0
    assert cli.main(["ppc", "negbin", "--datasets", "50", "--out", out]) == 0
    rows = read_csv(tmp_path / "o" / "ppc_negbin.csv")
    assert len(rows) == 80
    manifest = json.loads((tmp_path / "o" / "fit_negbin.json").read_text())
    assert manifest["column"] == "detections"
