import numpy as np
import pytest
from scipy import stats

from flarestat.errors import ValidationError
from flarestat.models import BAND_COLUMNS, DEFAULT_BANDS, compare_models, percentile_bands, waic, write_bands_csv


def waic_oracle(ll):
    """Direct per-observation loops, no vectorization shortcuts."""
    s, n = ll.shape
    lppd = p = 0.0
    contrib = []
    for i in range(n):
        col = ll[:, i]
        m = col.max()
        l_i = m + np.log(np.mean(np.exp(col - m)))
        p_i = np.sum((col - col.mean()) ** 2) / (s - 1)
        lppd += l_i
        p += p_i
        contrib.append(-2 * (l_i - p_i))
    contrib = np.array(contrib)
    return -2 * (lppd - p), np.sqrt(n * np.mean((contrib - contrib.mean()) ** 2)), p


def test_waic_matches_loop_oracle(rng):
    ll = stats.norm.logpdf(rng.standard_normal(30)[None, :], loc=rng.normal(0, 0.2, (400, 1)), scale=1.1)
    w = waic(ll)
    np.testing.assert_allclose(tuple(w), waic_oracle(ll), rtol=1e-12)
    np.testing.assert_allclose(w.waic, -2 * (w.lppd - w.p_waic), rtol=1e-14)


def test_waic_constant_loglik():
    ll = np.tile(np.array([-1.0, -2.5, -0.3]), (200, 1))
    w = waic(ll)
    assert w.p_waic == pytest.approx(0.0, abs=1e-25)
    np.testing.assert_allclose(w.waic, -2 * ll[0].sum(), rtol=1e-14)


def test_waic_doubles_on_duplicated_observations(rng):
    ll = rng.normal(-1, 0.3, (300, 12))
    assert waic(np.hstack([ll, ll])).waic == pytest.approx(2 * waic(ll).waic, rel=1e-13)


def test_waic_accepts_chains_by_draws_arrays(rng):
    ll = rng.normal(-1, 0.3, (2, 100, 5))
    np.testing.assert_allclose(waic(ll).waic, waic(ll.reshape(200, 5)).waic)


def test_waic_errors():
    with pytest.raises(ValidationError):
        waic(np.zeros((50, 3)))
    ll = np.zeros((200, 3))
    ll[1:, 1] = -np.inf
    with pytest.raises(ValidationError, match="observation 1"):
        waic(ll)


def test_compare_models_trivial_cases(rng):
    ll = rng.normal(-1, 0.3, (200, 10))
    (row,) = compare_models({"only": ll})
    assert row.d_waic == 0.0 and row.d_se == 0.0
    rows = compare_models({"a": ll, "b": ll.copy()})
    assert [r.d_waic for r in rows] == [0.0, 0.0]
    with pytest.raises(ValidationError):
        compare_models({"a": ll, "b": ll[:, :5]})


def test_compare_models_ranks_and_difference_se(rng):
    good = rng.normal(-1, 0.1, (200, 20))
    bad = good - rng.uniform(0.5, 1.5, 20)
    rows = compare_models({"bad": bad, "good": good})
    assert [r.name for r in rows] == ["good", "bad"]
    diff = waic(bad).pointwise - waic(good).pointwise
    np.testing.assert_allclose(rows[1].d_waic, diff.sum())
    np.testing.assert_allclose(rows[1].d_se, np.sqrt(20 * diff.var()))


def test_bands_default_edges():
    assert DEFAULT_BANDS[0] == (1, 99) and DEFAULT_BANDS[-1] == (49, 51)
    assert (5, 95) in DEFAULT_BANDS and (25, 75) in DEFAULT_BANDS


def test_bands_constant_samples_zero_width():
    rows = percentile_bands(np.full((200, 3), 4.2))
    assert all(r.value_lo == r.value_hi == 4.2 for r in rows)


def test_bands_standard_normal(rng):
    rows = percentile_bands(rng.standard_normal((100_000, 1)))
    b = next(r for r in rows if (r.percentile_lo, r.percentile_hi) == (5, 95))
    assert abs(b.value_lo + 1.645) < 0.05 and abs(b.value_hi - 1.645) < 0.05


def test_bands_nested(rng):
    rows = percentile_bands(rng.gamma(2.0, size=(500, 7)), grid=np.arange(10, 17))
    by_grid = {}
    for r in rows:
        by_grid.setdefault(r.grid, []).append(r)
    for g, bands in by_grid.items():
        bands = sorted(bands, key=lambda r: r.percentile_lo)
        for outer, inner in zip(bands, bands[1:]):
            assert outer.value_lo <= inner.value_lo <= inner.value_hi <= outer.value_hi


def test_bands_errors_and_csv(tmp_path, rng):
    with pytest.raises(ValidationError):
        percentile_bands(rng.standard_normal((50, 2)))
    rows = percentile_bands(rng.standard_normal((100, 2)), bands=((5, 95),))
    path = tmp_path / "bands.csv"
    write_bands_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(BAND_COLUMNS)
    assert len(lines) == 3
