import math

import numpy as np
import pytest
from scipy import constants, optimize
from sklearn.cluster import DBSCAN

from flarestat.errors import ValidationError
from flarestat.geo import R_EARTH_M
from flarestat.nightfire import (
    DETECTION_COLUMNS,
    NOISE,
    BandImage,
    HotSource,
    characterize,
    cluster_detections,
    coincidence_filter,
    detect_hot_pixels,
    fit_graybody,
    load_band,
    planck_radiance,
    radiant_heat,
    run_pipeline,
    save_band,
    source_area,
    synthetic_scene,
    write_detections_csv,
)

WAVELENGTHS = np.array([1.24e-6, 1.61e-6, 2.25e-6, 3.7e-6])
M_PER_DEG = 2 * math.pi * R_EARTH_M / 360


# --- physics


def test_radiant_heat_examples():
    assert abs(radiant_heat(1500.0, 1.0) - 0.28706) < 1e-4
    np.testing.assert_allclose(radiant_heat(1500.0, 1.0), constants.Stefan_Boltzmann * 1500.0**4 / 1e6, rtol=1e-9)
    assert radiant_heat(1500.0, 2.0) == pytest.approx(2 * radiant_heat(1500.0, 1.0))
    assert radiant_heat(3000.0, 1.0) == pytest.approx(16 * radiant_heat(1500.0, 1.0))
    with pytest.raises(ValidationError):
        radiant_heat(0.0, 1.0)


def test_source_area_examples():
    assert source_area(1.0, 375.0**2) == 375.0**2
    assert source_area(1e-2, 375.0**2) == pytest.approx(1406.25)
    assert source_area(1e-12, 375.0**2) < 1e-6
    for eps in (0.0, 1.5):
        with pytest.raises(ValidationError):
            source_area(eps, 1.0)


def test_planck_properties():
    lam = WAVELENGTHS
    assert np.all(planck_radiance(lam, 1800.0) > planck_radiance(lam, 1500.0))
    assert np.all(planck_radiance(lam, 1.0) < 1e-300)
    grid = np.linspace(0.5e-6, 5e-6, 4501)
    peak = grid[np.argmax(planck_radiance(grid, 1800.0))]
    assert abs(peak - constants.Wien / 1800.0) <= grid[1] - grid[0]
    with pytest.raises(ValidationError):
        planck_radiance(-1.0, 1000.0)


def test_planck_matches_direct_formula():
    h, c, k = constants.h, constants.c, constants.k
    for lam in WAVELENGTHS:
        want = 2 * h * c**2 / lam**5 / math.expm1(h * c / (lam * k * 1234.0))
        np.testing.assert_allclose(planck_radiance(lam, 1234.0), want, rtol=1e-12)


# --- graybody fit


def test_graybody_noise_free():
    r = 1e-2 * planck_radiance(WAVELENGTHS, 1800.0)
    fit = fit_graybody(r, WAVELENGTHS)
    assert abs(fit.T - 1800.0) < 1.0
    assert abs(fit.epsilon / 1e-2 - 1) < 1e-3
    assert fit.residual < 1e-8


def test_graybody_one_percent_noise_seeded():
    rng = np.random.default_rng(0)
    r = 1e-2 * planck_radiance(WAVELENGTHS, 1800.0) * (1 + 0.01 * rng.standard_normal(4))
    fit = fit_graybody(r, WAVELENGTHS)
    assert abs(fit.T / 1800.0 - 1) < 0.01
    assert abs(fit.epsilon / 1e-2 - 1) < 0.02


def test_graybody_noise_temperature_rate():
    # T is well determined at 1% noise; eps trades off against T and is looser
    rng = np.random.default_rng(1)
    hits = [abs(fit_graybody(1e-2 * planck_radiance(WAVELENGTHS, 1800.0) * (1 + 0.01 * rng.standard_normal(4)), WAVELENGTHS).T / 1800.0 - 1) < 0.01 for _ in range(300)]
    assert np.mean(hits) > 0.95


def test_graybody_matches_direct_least_squares():
    rng = np.random.default_rng(6)
    r = 3e-3 * planck_radiance(WAVELENGTHS, 1400.0) * (1 + 0.02 * rng.standard_normal(4))
    s = r.max()

    def resid(x):
        return x[1] * planck_radiance(WAVELENGTHS, x[0]) / s - r / s

    ref = optimize.least_squares(resid, [1500.0, 1e-2], x_scale=[100.0, 1e-3], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    fit = fit_graybody(r, WAVELENGTHS)
    np.testing.assert_allclose([fit.T, fit.epsilon], ref.x, rtol=1e-5)


def test_graybody_two_bands_exact():
    lam = WAVELENGTHS[[1, 3]]
    fit = fit_graybody(5e-3 * planck_radiance(lam, 2100.0), lam)
    assert fit.residual < 1e-12


def test_graybody_scale_consistency():
    r = 1e-3 * planck_radiance(WAVELENGTHS, 1700.0) * np.array([1.01, 0.99, 1.0, 1.005])
    a, b = fit_graybody(r, WAVELENGTHS), fit_graybody(250.0 * r, WAVELENGTHS)
    assert abs(a.T - b.T) < 0.1
    np.testing.assert_allclose(b.epsilon_raw, 250.0 * a.epsilon_raw, rtol=1e-6)


def test_graybody_errors():
    with pytest.raises(ValidationError):
        fit_graybody([1.0], [1e-6])
    with pytest.raises(ValidationError):
        fit_graybody([1.0, 2.0], [1e-6])
    with pytest.raises(ValidationError):
        fit_graybody([0.0, 0.0], [1e-6, 2e-6])


def test_characterize_chain():
    r = 1e-2 * planck_radiance(WAVELENGTHS, 1800.0)
    src = characterize(r, WAVELENGTHS, 375.0**2, 48.0, -103.0)
    assert src.S == pytest.approx(1406.25, rel=1e-3)
    assert src.RH == pytest.approx(radiant_heat(src.T, src.S))
    with pytest.raises(ValidationError):
        HotSource(0, 0, 1800.0, 0.0, 1.0, 1.0)


# --- detection


def band(values, name="M1", lam=1.6e-6):
    return BandImage(name, lam, values, 375.0**2)


def test_detect_examples(rng):
    assert detect_hot_pixels(band(np.full((10, 10), 3.0))) == set()
    v = rng.standard_normal((100, 100))
    v[17, 42] = 10.0 * v.std() + v.mean() + 10.0
    assert detect_hot_pixels(band(v)) == {(17, 42)}
    v[80, 3] = v[17, 42]
    assert detect_hot_pixels(band(v)) >= {(17, 42), (80, 3)}


def test_detect_threshold_is_configurable():
    v = np.zeros((10, 10))
    v[0, 0] = 1.0
    # one outlier in 100 sits 9.95 sd above the mean
    assert detect_hot_pixels(band(v), k=9.9) == {(0, 0)}
    assert detect_hot_pixels(band(v), k=10.0) == set()


def test_coincidence_filter_examples():
    assert coincidence_filter([{(1, 1), (2, 2)}, {(1, 1)}]) == {(1, 1)}
    assert coincidence_filter([set(), set()]) == set()
    assert coincidence_filter([{(0, 0)}, {(0, 1)}, {(0, 0)}]) == {(0, 0)}
    with pytest.raises(ValidationError):
        coincidence_filter([{(1, 1)}])


def test_pipeline_recovers_sources_and_is_deterministic():
    sources = ((12, 20, 1800.0, 1e-2), (30, 7, 1500.0, 5e-3))
    runs = [run_pipeline(synthetic_scene(np.random.default_rng(3), shape=(40, 40), sources=sources)) for _ in range(2)]
    assert runs[0] == runs[1]
    assert len(runs[0]) == 2
    for got, (_, _, T, eps) in zip(runs[0], sources):
        assert abs(got.T / T - 1) < 0.01
        assert abs(got.epsilon / eps - 1) < 0.02


def test_pipeline_needs_shared_grid():
    a = band(np.zeros((4, 4)))
    with pytest.raises(ValidationError):
        run_pipeline([a])
    with pytest.raises(ValidationError):
        run_pipeline([a, band(np.zeros((5, 4)), "M2")])


def test_band_io_roundtrip(tmp_path):
    img = synthetic_scene(np.random.default_rng(1), shape=(6, 5), sources=((2, 3, 1800.0, 1e-2),))[2]
    path = save_band(img, tmp_path / "b.csv")
    back = load_band(path)
    assert back.band == img.band and back.geotransform == img.geotransform
    np.testing.assert_array_equal(back.values, img.values)
    img.values.astype("<f8").tofile(tmp_path / "b.bin")
    (tmp_path / "b.bin.json").write_text('{"band": "M3", "wavelength_m": 2.25e-6, "pixel_area_m2": 1.0, "rows": 6, "cols": 5}')
    np.testing.assert_array_equal(load_band(tmp_path / "b.bin").values, img.values)
    (tmp_path / "c.bin").write_bytes(b"\0" * 16)
    (tmp_path / "c.bin.json").write_text('{"band": "M3", "wavelength_m": 2.25e-6, "pixel_area_m2": 1.0, "rows": 6, "cols": 5}')
    with pytest.raises(ValidationError):
        load_band(tmp_path / "c.bin")


def test_detections_csv(tmp_path):
    src = characterize(1e-2 * planck_radiance(WAVELENGTHS, 1800.0), WAVELENGTHS, 375.0**2, 48.0, -103.0)
    write_detections_csv([src], tmp_path / "d.csv")
    head, row = (tmp_path / "d.csv").read_text().splitlines()
    assert head == ",".join(DETECTION_COLUMNS)
    assert float(row.split(",")[2]) == src.T


# --- clustering


def blob(rng, lat, lon, n, spread_m):
    return lat + rng.normal(0, spread_m, n) / M_PER_DEG, lon + rng.normal(0, spread_m, n) / (M_PER_DEG * math.cos(math.radians(lat)))


def test_two_blobs(rng):
    a = blob(rng, 48.0, -103.0, 30, 50.0)
    b = blob(rng, 48.0 + 10_000 / M_PER_DEG, -103.0, 30, 50.0)
    cl = cluster_detections(np.r_[a[0], b[0]], np.r_[a[1], b[1]], 200.0, 4)
    assert cl.n_clusters == 2 and cl.n_noise == 0
    assert set(cl.labels[:30]) == {0} and set(cl.labels[30:]) == {1}


def test_all_noise():
    lat = 48.0 + np.arange(10) * 1000 / M_PER_DEG
    cl = cluster_detections(lat, np.full(10, -103.0), 200.0, 2)
    assert cl.n_clusters == 0 and np.all(cl.labels == NOISE)


def test_single_blob_of_120(rng):
    lat, lon = blob(rng, 47.8, -102.5, 120, 40.0)
    cl = cluster_detections(lat, lon, 200.0, 5)
    assert cl.n_clusters == 1
    assert cl.histogram() == {120: 1}


def test_matches_sklearn_haversine_dbscan(rng):
    lat, lon = [], []
    for c in range(6):
        a, b = blob(rng, 47.5 + 0.05 * c, -102.0, int(rng.integers(5, 40)), 80.0)
        lat.append(a)
        lon.append(b)
    lat = np.concatenate(lat + [rng.uniform(47.4, 47.9, 40)])
    lon = np.concatenate(lon + [rng.uniform(-102.2, -101.8, 40)])
    ours = cluster_detections(lat, lon, 150.0, 4)
    ref = DBSCAN(eps=150.0 / R_EARTH_M, min_samples=4, metric="haversine").fit(np.radians(np.column_stack([lat, lon])))
    core = np.zeros(lat.size, bool)
    core[ref.core_sample_indices_] = True
    # noise sets agree exactly; border points may legitimately differ in which cluster they join
    np.testing.assert_array_equal(ours.labels == NOISE, ref.labels_ == -1)
    pairs = {(a, b) for a, b in zip(ours.labels[core], ref.labels_[core])}
    assert len(pairs) == len({a for a, _ in pairs}) == len({b for _, b in pairs})


def test_permutation_invariance(rng):
    lat, lon = blob(rng, 47.5, -102.0, 60, 150.0)
    base = cluster_detections(lat, lon, 100.0, 3)
    perm = rng.permutation(lat.size)
    shuffled = cluster_detections(lat[perm], lon[perm], 100.0, 3)
    np.testing.assert_array_equal(base.labels[perm], shuffled.labels)


def test_cluster_validation():
    assert cluster_detections([], [], 100.0, 2).n_clusters == 0
    with pytest.raises(ValidationError):
        cluster_detections([0.0], [0.0], 0.0, 2)
    with pytest.raises(ValidationError):
        cluster_detections([0.0], [0.0], 10.0, 0)
