import numpy as np
import pytest

from sbrest.diagnostics import ess, split_rhat
from sbrest.sampler import PosteriorDraws, SamplerConfig, SamplingError, sample


def std_normal_logp(dim):
    def logp(u):
        return -0.5 * float(u @ u), -u
    return logp


def correlated_gaussian_logp(rho=0.9):
    cov = np.array([[1.0, rho], [rho, 1.0]])
    prec = np.linalg.inv(cov)

    def logp(u):
        return -0.5 * float(u @ prec @ u), -prec @ u
    return logp, cov


CFG = SamplerConfig(n_chains=4, n_iter=1500, n_warmup=500, seed=0)


@pytest.fixture(scope="module")
def std_normal_draws():
    return sample(std_normal_logp(10), CFG, dim=10)


def test_standard_normal_moments(std_normal_draws):
    flat = std_normal_draws.flat()
    assert np.max(np.abs(flat.mean(axis=0))) < 0.05
    assert np.max(np.abs(flat.std(axis=0) - 1.0)) < 0.05


def test_standard_normal_mixing(std_normal_draws):
    for k in range(10):
        chains = std_normal_draws.draws[:, :, k]
        assert split_rhat(chains) < 1.01
        assert ess(chains) > 400


def test_no_divergences_on_gaussian(std_normal_draws):
    assert std_normal_draws.n_divergent == 0


def test_correlated_gaussian_covariance():
    logp, cov = correlated_gaussian_logp()
    draws = sample(logp, SamplerConfig(n_chains=4, n_iter=2500, n_warmup=800, seed=1),
                   dim=2)
    flat = draws.flat()
    est = np.cov(flat.T)
    assert np.max(np.abs(flat.mean(axis=0))) < 0.05
    assert np.max(np.abs(est - cov)) < 0.05
    for k in range(2):
        assert split_rhat(draws.draws[:, :, k]) < 1.01
        assert ess(draws.draws[:, :, k]) > 400


def test_determinism_under_fixed_seed():
    a = sample(std_normal_logp(3), SamplerConfig(n_chains=2, n_iter=400, n_warmup=200, seed=7), dim=3)
    b = sample(std_normal_logp(3), SamplerConfig(n_chains=2, n_iter=400, n_warmup=200, seed=7), dim=3)
    np.testing.assert_array_equal(a.draws, b.draws)
    np.testing.assert_array_equal(a.step_size, b.step_size)


def test_different_seeds_differ():
    a = sample(std_normal_logp(3), SamplerConfig(n_chains=2, n_iter=400, n_warmup=200, seed=7), dim=3)
    b = sample(std_normal_logp(3), SamplerConfig(n_chains=2, n_iter=400, n_warmup=200, seed=8), dim=3)
    assert not np.array_equal(a.draws, b.draws)


def test_per_chain_init_is_respected():
    init = np.full((2, 3), 0.5)
    draws = sample(std_normal_logp(3),
                   SamplerConfig(n_chains=2, n_iter=300, n_warmup=150, seed=2),
                   init=init)
    assert draws.draws.shape == (2, 150, 3)


def test_nonfinite_at_init_raises():
    def bad(u):
        return -np.inf, np.zeros_like(u)
    with pytest.raises(SamplingError):
        sample(bad, SamplerConfig(n_chains=1, n_iter=200, n_warmup=100, seed=0), dim=2)


def test_mass_matrix_adapts_to_scales():
    scales = np.array([0.1, 1.0, 10.0])

    def logp(u):
        z = u / scales
        return -0.5 * float(z @ z), -z / scales

    draws = sample(logp, SamplerConfig(n_chains=2, n_iter=2000, n_warmup=800, seed=3),
                   dim=3)
    sds = draws.flat().std(axis=0)
    assert np.all(np.abs(sds / scales - 1.0) < 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(n_iter=100, n_warmup=100)
    with pytest.raises(ValueError):
        SamplerConfig(target_accept=1.5)


def test_posterior_draws_accessors(std_normal_draws):
    d = std_normal_draws
    assert isinstance(d, PosteriorDraws)
    assert d.flat().shape == (4 * 1000, 10)
    assert 0.0 <= d.divergence_rate <= 1.0
