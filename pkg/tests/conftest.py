import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from slnexpand.sln import SlnSpec

settings.register_profile(
    "default", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def test1_spec():
    return SlnSpec.from_diag_rho([0.0, 0.0], [0.5, 1.0], -0.2)


@pytest.fixture
def test2_spec():
    return SlnSpec.from_diag_rho([-0.5, 0.5], [1.0, 1.0], 0.5)


def random_pd(rng, n, jitter=0.1):
    a = rng.standard_normal((n, n))
    return a @ a.T + jitter * np.eye(n)


def cmc_noise_l2(case, K, seed):
    """L2 size on the metric grid of the CMC noise of f_hat_N, from coefficient variances."""
    from scipy import integrate, stats

    from slnexpand import bench, expand
    from slnexpand.orthopoly import hermite_basis

    s = np.exp(bench.shared_samples(case, seed)).sum(axis=1)
    tr = expand.fhat_normal(case.spec, K, samples=s, reference=case.normal_reference).transform
    basis = hermite_basis(0, 1, K)
    var = basis((np.log(s) - tr.mu) / tr.sigma, K).var(axis=1, ddof=1) / s.size
    xs = bench.metric_grid(case.upper)
    w = (np.log(xs) - tr.mu) / tr.sigma
    g = basis(w, K) * stats.norm.pdf(w) / (tr.sigma * xs)
    return float(np.sqrt(var @ integrate.simpson(g * g, x=xs, axis=1)))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import REPORT
    except ImportError:
        return
    if REPORT:
        terminalreporter.section("acceptance criteria")
        for line in REPORT:
            terminalreporter.write_line(line)
