import numpy as np
import pytest

from flarestat.sampler import SamplerConfig


def central_difference(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def assert_grad_close(program, u, rtol=1e-5, atol=1e-7, h=1e-6):
    value, grad = program.value_and_grad(u)
    assert np.isfinite(value)
    np.testing.assert_allclose(value, program.log_density(u), rtol=1e-12, atol=1e-12)
    fd = central_difference(program.log_density, u, h)
    np.testing.assert_allclose(grad, fd, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture
def quick_cfg():
    return SamplerConfig(chains=2, warmup_iters=300, draw_iters=300, seed=11)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
