import json
import math

import numpy as np
import pytest

from flarestat.distributions import Gamma, Normal
from flarestat.errors import InitializationError, ValidationError
from flarestat.ppl import LogDensityProgram, ParamSpec, positive, unit_interval
from flarestat.ppl import tape as ad
from flarestat.sampler import (
    SUMMARY_COLUMNS,
    SamplerConfig,
    Trace,
    WindowSchedule,
    chain_rngs,
    equal_tailed,
    ess,
    hdi,
    max_rhat,
    nuts_sample,
    rhat,
    summarize,
    write_summary_csv,
)

P_CORR = np.linalg.inv(np.array([[1.0, 0.9], [0.9, 1.0]]))


def normal_program(dim):
    return LogDensityProgram([ParamSpec("x", (dim,))], lambda v: -0.5 * ad.sum(ad.square(v["x"])))


def correlated_program():
    def log_prob(v):
        x = v["x"]
        return -0.5 * (P_CORR[0, 0] * x[0] ** 2 + 2 * P_CORR[0, 1] * x[0] * x[1] + P_CORR[1, 1] * x[1] ** 2)

    return LogDensityProgram([ParamSpec("x", (2,))], log_prob)


def funnel(centered):
    if centered:
        return LogDensityProgram(
            [ParamSpec("y"), ParamSpec("x", (9,))],
            lambda v: Normal(0, 3).logpdf(v["y"]) + ad.sum(Normal(0, ad.exp(v["y"] / 2)).logpdf(v["x"])),
        )
    return LogDensityProgram(
        [ParamSpec("y"), ParamSpec("z", (9,))],
        lambda v: Normal(0, 3).logpdf(v["y"]) + ad.sum(Normal(0, 1).logpdf(v["z"])),
    )


@pytest.fixture(scope="module")
def normal5_trace():
    return nuts_sample(normal_program(5), SamplerConfig(chains=4, warmup_iters=1000, draw_iters=1000, seed=1))


@pytest.fixture(scope="module")
def corr_trace():
    return nuts_sample(correlated_program(), SamplerConfig(chains=4, warmup_iters=1000, draw_iters=2000, seed=2))


def test_standard_normal_moments(normal5_trace):
    x = normal5_trace.flat("x")
    assert x.shape == (4000, 5)
    assert np.all(np.abs(x.mean(axis=0)) < 0.1)
    v = x.var(axis=0)
    assert np.all((v > 0.85) & (v < 1.15))
    assert normal5_trace.divergences == 0


def test_correlated_gaussian_recovers_rho(corr_trace):
    x = corr_trace.flat("x")
    assert abs(np.corrcoef(x.T)[0, 1] - 0.9) < 0.02


@pytest.mark.parametrize("which", ["normal5_trace", "corr_trace"])
def test_post_warmup_accept_stat_near_target(which, request):
    tr = request.getfixturevalue(which)
    assert abs(tr.stats["accept_stat"].mean() - 0.8) < 0.05


def test_funnel_centered_vs_noncentered():
    cfg = SamplerConfig(chains=4, warmup_iters=1000, draw_iters=1000, seed=1)
    nc = nuts_sample(funnel(False), cfg)
    assert nc.divergences == 0
    assert max_rhat(nc) < 1.05
    c = nuts_sample(funnel(True), cfg)
    assert c.divergences > 0


def test_gamma_prior_only_mean():
    prog = LogDensityProgram([ParamSpec("b", (), positive)], lambda v: Gamma(2, 2).logpdf(v["b"]))
    tr = nuts_sample(prog, SamplerConfig(chains=4, warmup_iters=500, draw_iters=1000, seed=3))
    assert abs(tr.flat("b").mean() - 1.0) < 0.05
    assert np.all(tr["b"] > 0)


def test_determinism_and_shapes():
    prog = LogDensityProgram(
        [ParamSpec("m"), ParamSpec("p", (), unit_interval)],
        lambda v: Normal(0, 1).logpdf(v["m"]) + 2 * ad.log(v["p"]) + ad.log1p(-v["p"]),
    )
    cfg = SamplerConfig(chains=3, warmup_iters=100, draw_iters=50, seed=4)
    a, b = nuts_sample(prog, cfg), nuts_sample(prog, cfg)
    np.testing.assert_array_equal(a["m"], b["m"])
    assert a["m"].shape == (3, 50)
    assert np.all((a["p"] > 0) & (a["p"] < 1))
    assert set(a.stats) >= {"divergences", "step_size", "tree_depth", "accept_stat", "energy"}
    c = nuts_sample(prog, cfg, seed=5)
    assert not np.array_equal(a["m"], c["m"])


def test_chain_streams_independent_of_count():
    a = [g.random() for g in chain_rngs(7, 2)]
    b = [g.random() for g in chain_rngs(7, 4)]
    assert a == b[:2]


def test_config_validation():
    with pytest.raises(ValidationError):
        SamplerConfig(chains=1)
    with pytest.raises(ValidationError):
        SamplerConfig(target_accept=1.0)


def test_initialization_failure_names_block():
    prog = LogDensityProgram([ParamSpec("a"), ParamSpec("bad")], lambda v: ad.log(-ad.square(v["bad"]) - 1.0) + v["a"])
    with pytest.raises(InitializationError) as exc:
        nuts_sample(prog, SamplerConfig(chains=2, warmup_iters=10, draw_iters=10))
    assert "bad" in str(exc.value)


def test_window_schedule_default_layout():
    w = WindowSchedule(1000)
    ends = [i for i in range(1000) if w.step()]
    assert ends == [99, 149, 249, 449, 949]


# --- diagnostics against direct formulas


def oracle_split_rhat(x):
    half = x.shape[1] // 2
    s = np.vstack([x[:, :half], x[:, -half:]])
    n = s.shape[1]
    W = np.mean(np.var(s, axis=1, ddof=1))
    B = n * np.var(np.mean(s, axis=1), ddof=1)
    return math.sqrt(((n - 1) / n * W + B / n) / W)


def test_rhat_matches_direct_formula(rng):
    x = rng.standard_normal((4, 1000)) + np.array([[0.0], [0.1], [0.0], [0.3]])
    np.testing.assert_allclose(rhat(x), oracle_split_rhat(x), rtol=1e-12)


def test_rhat_examples(rng):
    assert rhat(rng.standard_normal((4, 1000))) < 1.01
    assert rhat(rng.standard_normal((4, 1000)) + np.array([[0], [0], [0], [10]])) > 1.5
    assert rhat(np.full((4, 100), 2.5)) == 1.0
    assert rhat(np.repeat(np.arange(4.0)[:, None], 100, axis=1)) == math.inf
    with pytest.raises(ValidationError):
        rhat(np.zeros((1, 100)))


def test_rhat_by_name():
    tr = Trace.from_arrays({"a": np.random.default_rng(0).standard_normal((2, 40, 2))})
    assert rhat(tr, "a[1]") == rhat(tr["a"][:, :, 1])


def test_ess_iid(rng):
    e = ess(rng.standard_normal((4, 1000)))
    assert 3000 <= e <= 4800


def ar1(rng, rho, chains, n):
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains)
    eps = rng.standard_normal((chains, n)) * math.sqrt(1 - rho**2)
    for t in range(1, n):
        x[:, t] = rho * x[:, t - 1] + eps[:, t]
    return x


def test_ess_ar1_theory(rng):
    x = ar1(rng, 0.9, 4, 5000)
    expected = x.size * 0.1 / 1.9
    assert abs(ess(x) - expected) < 0.3 * expected


def test_ess_antithetic_exceeds_n():
    x = np.tile(np.array([1.0, -1.0]), (4, 500)) + 1e-3 * np.random.default_rng(0).standard_normal((4, 1000))
    e = ess(x)
    assert e > x.size
    assert e <= 1.5 * x.size


def test_interval_examples():
    x = np.arange(1.0, 101.0)
    lo, hi = equal_tailed(x, 0.9)
    assert (lo, hi) == (6.0, 95.0)
    h = hdi(x, 0.9)
    assert h[1] - h[0] <= hi - lo
    assert hdi(np.full(50, 3.0)) == (3.0, 3.0)
    assert equal_tailed(np.full(50, 3.0)) == (3.0, 3.0)


def test_hdi_of_symmetric_sample_matches_equal_tailed(rng):
    x = rng.standard_normal(200_000)
    h, e = hdi(x, 0.9), equal_tailed(x, 0.9)
    # MC se of the 5% quantile of a standard normal at this n
    se = math.sqrt(0.05 * 0.95 / x.size) / 0.10314
    assert abs(h[0] - e[0]) < 2 * se and abs(h[1] - e[1]) < 2 * se


def test_hdi_never_wider_than_equal_tailed(rng):
    for _ in range(200):
        x = rng.gamma(rng.uniform(0.3, 5), size=int(rng.integers(2, 300)))
        for prob in (0.5, 0.9, 0.95):
            h, e = hdi(x, prob), equal_tailed(x, prob)
            assert h[1] - h[0] <= e[1] - e[0] + 1e-12


def test_hdi_covers_ceil_prob_n():
    x = np.random.default_rng(1).exponential(size=101)
    lo, hi = hdi(x, 0.9)
    assert np.sum((x >= lo) & (x <= hi)) == math.ceil(0.9 * 101)


def test_summarize_and_csv(tmp_path, normal5_trace):
    rows = summarize(normal5_trace, prob=0.9)
    assert [r.param for r in rows] == [f"x[{i}]" for i in range(5)]
    r = rows[0]
    assert r.ci_lo < r.mean < r.ci_hi and r.hdi_lo < r.hdi_hi
    assert r.iqr > 0 and r.rhat < 1.05 and r.ess > 400
    path = tmp_path / "summary.csv"
    write_summary_csv(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(SUMMARY_COLUMNS)
    assert len(lines) == 6
    with pytest.raises(ValidationError):
        summarize(normal5_trace, prob=1.5)


def test_trace_json_round_trip(tmp_path):
    prog = LogDensityProgram(
        [ParamSpec("s", (), positive), ParamSpec("v", (2,))],
        lambda v: Gamma(2, 1).logpdf(v["s"]) + ad.sum(Normal(0, 1).logpdf(v["v"])),
        pointwise_loglik=lambda v: Normal(0, v["s"]).logpdf(np.array([0.1, -0.4, 0.9])),
    )
    tr = nuts_sample(prog, SamplerConfig(chains=2, warmup_iters=50, draw_iters=20, seed=9))
    path = tmp_path / "trace.json"
    tr.save(path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"params", "chains", "draws", "samples", "log_lik", "stats"}
    assert set(doc["stats"]) == {"divergences", "step_size", "tree_depth"}
    assert doc["params"][0] == {"name": "s", "shape": [], "constraint": "positive"}
    back = Trace.load(path)
    np.testing.assert_array_equal(back["v"], tr["v"])
    np.testing.assert_array_equal(back.log_lik, tr.log_lik)
    assert back.log_lik.shape == (2, 20, 3)
    with pytest.raises(ValidationError):
        Trace.from_dict({"params": []})
