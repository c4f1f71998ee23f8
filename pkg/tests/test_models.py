import math

import numpy as np
import pytest
from scipy import special, stats

from flarestat import gp, synth
from flarestat.distributions import StudentT
from flarestat.errors import ValidationError
from flarestat.models import (
    COUNTY_TABLE,
    GP_KINDS,
    LATENT_NAME,
    MCF_PER_BOE,
    SLOPE_UNIDENTIFIED,
    CountyRegistry,
    EntitySeries,
    MixtureFit,
    county_program,
    fit_county_hierarchical,
    fit_gmm,
    fit_gp_series,
    fit_negbin_counts,
    fit_state_linear,
    forecast_latent,
    gas_capture_from_proportion,
    gmm_program,
    gp_series_program,
    kernel_for,
    latent_joint_logpdf,
    link,
    marginal_logpdf,
    mu_tilde,
    no_pool_estimates,
    posterior_predictive,
    predict_state,
    responsibilities,
    state_linear_program,
)
from flarestat.models.gpseries import _hyper_prior
from flarestat.sampler import SamplerConfig, Trace, max_rhat

from conftest import assert_grad_close

SMALL = SamplerConfig(chains=2, warmup_iters=300, draw_iters=300, seed=11)


def series_for(kind, n=8, rng=None):
    rng = rng or np.random.default_rng(0)
    wells = rng.integers(20, 60, n).astype(float)
    gas = rng.uniform(50, 100, n)
    oil = rng.uniform(20, 40, n)
    viirs = rng.uniform(0.1, 0.3, n)
    return EntitySeries(
        np.arange(n, dtype=float),
        flared=gas * 0.2,
        gas=gas,
        oil=oil,
        wells=wells,
        flaring_wells=np.floor(wells * 0.3),
        detections=rng.poisson(5, n).astype(float),
        viirs=viirs,
        ndic=viirs * 0.8,
    )


# --- structure and pure helpers


def test_predict_state_point_value():
    assert predict_state(0.061, 0.535, 0.0) == pytest.approx(0.061)
    np.testing.assert_allclose(predict_state(0.061, 0.535, [0.0, 1.0]), [0.061, 0.596])


def test_gas_capture():
    assert gas_capture_from_proportion(0.0) == 1.0
    assert gas_capture_from_proportion(1.0) == 0.0
    assert gas_capture_from_proportion(0.25) == 0.75
    with pytest.raises(ValidationError):
        gas_capture_from_proportion(1.2)


def test_county_registry():
    reg = CountyRegistry()
    assert len(reg) == 12 == len(COUNTY_TABLE)
    abbr = COUNTY_TABLE[3][0]
    assert reg.index_of(abbr) == 3 and reg.label_of(3) == abbr
    with pytest.raises(ValidationError):
        reg.index_of("NOPE")
    assert reg.register("NEW", "Newcounty") == 12
    assert reg.index_of("NEW") == 12


def test_state_program_gradient(rng):
    v, n = synth.state_data(rng, 12)
    assert_grad_close(state_linear_program(v, n), rng.standard_normal(3) * 0.5)


@pytest.mark.parametrize("param", ["centered", "noncentered", "mixed"])
def test_county_program_gradient(param, rng):
    idx, v, n, _, _ = synth.county_data(rng, [4, 3, 2])
    prog = county_program(idx, v, n, 3, param, centered=[1] if param == "mixed" else None)
    assert_grad_close(prog, rng.standard_normal(prog.dim) * 0.3, rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("kind", GP_KINDS)
def test_gp_program_gradient(kind, rng):
    prog = gp_series_program(series_for(kind, 6), kind)
    assert_grad_close(prog, rng.standard_normal(prog.dim) * 0.3, rtol=1e-4, atol=1e-6)


def test_gp_negbin_swap_gradient(rng):
    prog = gp_series_program(series_for("detection_count", 6), "detection_count", negbin=True)
    assert "phi" in [p.name for p in prog.params]
    assert_grad_close(prog, rng.standard_normal(prog.dim) * 0.3, rtol=1e-4, atol=1e-6)
    with pytest.raises(ValidationError):
        gp_series_program(series_for("scale_factor", 6), "scale_factor", negbin=True)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_gmm_program_gradient(k, rng):
    prog = gmm_program(synth.gmm_data(rng, 30), k)
    assert_grad_close(prog, rng.standard_normal(prog.dim) * 0.3, rtol=1e-4, atol=1e-6)


@pytest.mark.parametrize("kind", GP_KINDS)
def test_link_ranges_over_random_draws(kind, rng):
    prog = gp_series_program(series_for(kind, 10), kind)
    for _ in range(50):
        # moderate scale: the logistic saturates to exactly 0 or 1 in float64 past |f| ~ 37
        values = prog.constrain(rng.standard_normal(prog.dim) * 0.7)
        latent = prog.deterministics(values)[LATENT_NAME[kind]]
        if kind in ("detection_count", "scale_factor"):
            assert np.all(latent > 0)
        else:
            assert np.all((latent > 0) & (latent < 1))


def test_link_functions():
    np.testing.assert_allclose(link("well_proportion", 0.0), 0.5)
    np.testing.assert_allclose(link("scale_factor", 0.0), 1.0)
    with pytest.raises(ValidationError):
        link("bogus", 0.0)


def test_missing_field_and_wells_check():
    s = EntitySeries(np.arange(4.0), wells=np.full(4, 10.0))
    with pytest.raises(ValidationError, match="flaring_wells"):
        gp_series_program(s, "well_proportion")
    with pytest.raises(ValidationError, match="exceed"):
        EntitySeries(np.arange(3.0), wells=np.array([5.0, 5, 5]), flaring_wells=np.array([1.0, 6, 2]))
    with pytest.raises(ValidationError):
        EntitySeries(np.arange(3.0), detections=np.array([1.0, 2.5, 3]))


def test_boe_conversion_enters_likelihood():
    s = EntitySeries(np.arange(2.0), flared=np.array([6.0, 12.0]), oil=np.array([10.0, 10.0]))
    prog = gp_series_program(s, "boe_proportion")
    values = {"ell": 2.0, "eta": 1.0, "nu": 4.0, "s2": 0.5, "f_tilde": np.zeros(2)}
    # f = 0 gives pi = 0.5, so the mean is 5 boe and E = (1, 2) boe
    expected = StudentT(4.0, 5.0, 2.0).logpdf(np.array([1.0, 2.0]))
    np.testing.assert_allclose(prog.pointwise_loglik(values), expected, rtol=1e-12)
    assert MCF_PER_BOE == 6.0


def test_scale_factor_prior_structure():
    values = {"ell_mat": 4.0, "eta_mat": 0.5, "period": 12.0, "ell_per": 1.3, "eta_per": 0.2}
    k = kernel_for("scale_factor", values)
    assert isinstance(k, gp.Sum)
    atoms = [k.left.left, k.left.right, k.right]
    assert [type(a) for a in atoms] == [gp.Matern52, gp.Periodic, gp.WhiteNoise]
    assert atoms[2].delta == 1e-6
    lp = _hyper_prior("scale_factor", {**values, "nu": 3.0, "s2": 0.2})
    expected = (
        stats.gamma(8, scale=0.5).logpdf(4.0)
        + stats.halfcauchy(scale=5).logpdf(0.5)
        + stats.norm(12, 1).logpdf(12.0)
        + stats.gamma(4, scale=1 / 3).logpdf(1.3)
        + stats.halfcauchy(scale=5).logpdf(0.2)
        + stats.gamma(2, scale=10).logpdf(3.0)
        + stats.halfcauchy(scale=5).logpdf(0.2)
    )
    np.testing.assert_allclose(lp, expected, rtol=1e-12)


def test_mu_tilde_evenly_spaced():
    x = np.array([-7.0, -1.0, -4.0])
    np.testing.assert_allclose(mu_tilde(x, 4), [-7, -5, -3, -1])
    np.testing.assert_allclose(mu_tilde(x, 1), [-4.0])


def test_marginal_equals_enumeration_oracle(rng):
    x = rng.normal(-3, 2, 4)
    for k in (1, 2, 3):
        w = rng.dirichlet(np.ones(k))
        m, s = rng.normal(-3, 2, k), rng.uniform(0.3, 2, k)
        total = -np.inf
        for z in np.ndindex(*(k,) * x.size):
            total = np.logaddexp(total, latent_joint_logpdf(x, z, w, m, s))
        np.testing.assert_allclose(marginal_logpdf(x, w, m, s).sum(), total, atol=1e-10)


def test_responsibilities_examples():
    r = responsibilities((np.array([0.5, 0.5]), np.array([-1.0, 1.0]), np.array([0.7, 0.7])), 0.0)
    np.testing.assert_allclose(r, [0.5, 0.5], atol=1e-15)
    r = responsibilities((np.array([0.5, 0.5]), np.array([0.0, 12.0]), np.array([1.0, 1.0])), 0.0)
    assert r[0] > 0.999
    r = responsibilities((np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])), np.linspace(-5, 9, 15))
    np.testing.assert_array_equal(r[:, 0], 1.0)
    r = responsibilities((np.array([0.2, 0.3, 0.5]), np.array([-2.0, 0.0, 3.0]), np.array([1.0, 0.5, 2.0])), np.linspace(-5, 9, 50))
    np.testing.assert_allclose(r.sum(axis=1), 1.0, atol=1e-12)


def test_gmm_k_range_validation():
    x = np.random.default_rng(0).standard_normal(20)
    with pytest.raises(ValidationError):
        fit_gmm(x, 8)
    with pytest.raises(ValidationError):
        fit_gmm(x, 2, k_range=(2, 3), cfg=SMALL) if False else fit_gmm(x, 1, k_range=(2, 7))
    with pytest.raises(ValidationError):
        fit_gmm(x[:2], 2)
    with pytest.raises(ValidationError):
        MixtureFit(2, np.array([0.3, 0.3]), np.zeros(2), np.ones(2), None)


def test_negbin_input_validation():
    with pytest.raises(ValidationError):
        fit_negbin_counts(np.arange(5))
    with pytest.raises(ValidationError):
        fit_negbin_counts(np.array([1.5] * 12))


def test_county_validation():
    with pytest.raises(ValidationError):
        fit_county_hierarchical((np.zeros(5, int), np.ones(5), np.ones(5)), cfg=SMALL)
    with pytest.raises(ValidationError):
        fit_county_hierarchical((np.array([0, 12]), np.ones(2), np.ones(2)), cfg=SMALL)
    with pytest.raises(ValidationError):
        county_program(np.array([0, 1]), np.ones(2), np.ones(2), 2, "sideways")


def test_no_pool_estimates_least_squares():
    idx = np.array([0, 0, 0, 1, 1, 2])
    v = np.array([1.0, 2.0, 3.0, 1.0, 3.0, 2.0])
    n = np.array([1.1, 2.1, 3.1, 0.0, 4.0, 1.0])
    est = no_pool_estimates(idx, v, n, 3)
    np.testing.assert_allclose(est[0], [0.1, 1.0], atol=1e-12)
    np.testing.assert_allclose(est[1], [-2.0, 2.0], atol=1e-12)
    assert np.all(np.isnan(est[2]))


# --- hand-built traces for predictive and forecast checks


def _gp_trace(kind, n, ell=3.0, eta=1.0, draws=400, seed=0):
    rng = np.random.default_rng(seed)
    ft = rng.standard_normal((2, draws, n))
    samples = {"ell": np.full((2, draws), ell), "eta": np.full((2, draws), eta), "f_tilde": ft}
    tr = Trace.from_arrays(samples, {"ell": "positive", "eta": "positive"})
    tr.meta.update(kind=kind, x=np.arange(n, dtype=float))
    return tr


def test_forecast_far_horizon_reverts_to_prior():
    tr = _gp_trace("well_proportion", 10, ell=2.0, eta=1.3)
    grid, s = forecast_latent(tr, "well_proportion", horizon=np.array([300.0]), seed=1)
    prior = special.expit(1.3 * np.random.default_rng(2).standard_normal(200_000))
    assert stats.ks_2samp(s[:, 0], prior).pvalue > 0.001
    assert grid.tolist() == [300.0]


def test_forecast_on_training_months_matches_in_sample_latent():
    tr = _gp_trace("detection_count", 12, ell=3.0, eta=0.8)
    grid, s = forecast_latent(tr, "detection_count", horizon=np.arange(12.0), seed=1)
    k = gp.Matern52(3.0, 0.8)
    _, L = gp.gram(k, np.arange(12.0))
    in_sample = np.exp(tr.flat("f_tilde") @ L.T)
    np.testing.assert_allclose(s.mean(axis=0), in_sample.mean(axis=0), rtol=2e-3)


def test_forecast_width_grows_with_distance():
    tr = _gp_trace("detection_count", 15, ell=6.0, eta=1.0, draws=4000)
    tr.samples["f_tilde"][:] = np.linspace(-1, 1, 15)
    grid, s = forecast_latent(tr, "detection_count", horizon=12, seed=3)
    np.testing.assert_array_equal(grid, np.arange(15.0, 27.0))
    _, cov = gp.gp_condition(np.arange(15.0), np.zeros(15), gp.Matern52(6.0, 1.0), grid)
    assert np.all(np.diff(np.diag(cov)) >= -1e-12)
    widths = np.diff(np.percentile(np.log(s), [5, 95], axis=0), axis=0)[0]
    assert np.all(np.diff(widths[[0, 2, 5, 11]]) > 0)
    with pytest.raises(ValidationError):
        forecast_latent(tr, "detection_count", horizon=0)


def test_predictive_state_noiseless_limit():
    v = np.array([0.1, 0.2, 0.4])
    tr = Trace.from_arrays({"alpha": np.full((2, 60), 0.05), "beta": np.full((2, 60), 0.5), "sigma": np.full((2, 60), 1e-300)})
    sims = posterior_predictive(tr, "state", 20, data={"viirs": v})
    np.testing.assert_array_equal(sims, np.tile(0.05 + 0.5 * v, (20, 1)))


def test_predictive_binomial_support_and_determinism():
    tr = _gp_trace("well_proportion", 6)
    tr.samples["p"] = np.full((2, 400, 6), 0.7)
    tr.params.append(("p", (6,), "deterministic"))
    wells = np.array([3.0, 10, 0, 7, 50, 1])
    a = posterior_predictive(tr, n_datasets=200, data={"wells": wells}, seed=4)
    b = posterior_predictive(tr, n_datasets=200, data={"wells": wells}, seed=4)
    np.testing.assert_array_equal(a, b)
    assert np.all(a <= wells) and np.all(a >= 0)
    with pytest.raises(ValidationError):
        posterior_predictive(tr, "unknown", 5, data={})
