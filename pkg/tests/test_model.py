import numpy as np
import pytest

from sbrest.model import (
    HORSESHOE,
    SUBSETTED,
    ModelSpec,
    ParameterVector,
    PriorConfig,
    log_posterior,
    make_logp_fn,
    make_subsetted_spec,
    subset_covariates,
    tau0_from_sparsity_guess,
    theta,
    theta_matrix,
)
from sbrest.splines import build_basis
from sbrest.synthetic import make_dataset


def small_spec(prior=None, seed=0):
    rng = np.random.default_rng(seed)
    C, T, K, n = 5, 10, 3, 30
    basis = build_basis(2000, 2009)
    return ModelSpec(
        log_y=rng.normal(2.5, 0.5, n),
        obs_country=rng.integers(0, C, n),
        obs_year=rng.integers(0, T, n),
        obs_source=rng.integers(0, 4, n),
        s2=rng.uniform(0.01, 0.05, n),
        gamma=np.where(rng.random(n) < 0.2, 0.2, 0.0),
        phi2=rng.uniform(0, 0.01, n),
        X=rng.standard_normal((K, C, T)),
        covariate_names=("a", "b", "c"),
        region_of_country=np.array([0, 0, 1, 1, 1]),
        n_regions=2,
        basis=basis,
        prior=prior or PriorConfig(),
    )


@pytest.mark.parametrize("prior", [PriorConfig(), PriorConfig(mode=SUBSETTED)])
def test_gradient_matches_finite_differences(prior):
    spec = small_spec(prior)
    layout = ParameterVector(spec)
    rng = np.random.default_rng(1)
    h = 1e-6
    for _ in range(5):
        u = rng.uniform(-1, 1, layout.size)
        value, grad = log_posterior(u, spec)
        for k in rng.choice(layout.size, 10, replace=False):
            e = np.zeros(layout.size)
            e[k] = h
            fd = (log_posterior(u + e, spec)[0] - log_posterior(u - e, spec)[0]) / (2 * h)
            assert abs(fd - grad[k]) / max(abs(fd), 1.0) < 1e-5


def test_smoother_sums_to_zero_per_country():
    spec = small_spec()
    layout = ParameterVector(spec)
    u = np.random.default_rng(2).uniform(-1, 1, layout.size)
    params = layout.constrain(u)
    alpha = np.asarray(params["alpha"])
    assert np.max(np.abs(alpha.sum(axis=1))) < 1e-12


def test_constrained_shapes_and_supports():
    spec = small_spec()
    layout = ParameterVector(spec)
    u = np.random.default_rng(3).uniform(-2, 2, layout.size)
    p = {k: np.asarray(v) for k, v in layout.constrain(u).items()}
    assert p["beta"].shape == (3,)
    assert p["varsigma"].shape == (5,)
    assert p["alpha"].shape == (5, spec.basis.n_basis)
    assert p["sigma_j"].shape == (4,)
    assert p["psi4"] <= 0
    assert np.all(p["psi"][:3] == 0) and p["psi"][3] == p["psi4"]
    assert 0 < p["sigma_delta"] < 3
    for name in ("tau", "rho2", "sigma_varsigma", "sigma_eta"):
        assert p[name] > 0
    assert np.all(p["lambda_tilde2"] <= p["rho2"] / p["tau"] ** 2 + 1e-12)


def test_theta_composition():
    spec = small_spec()
    layout = ParameterVector(spec)
    u = np.random.default_rng(4).uniform(-1, 1, layout.size)
    p = {k: np.asarray(v) for k, v in layout.constrain(u).items()}
    Theta = np.asarray(theta_matrix(p, spec))
    c, t = 2, 7
    expected = (p["varsigma"][c] + spec.X[:, c, t] @ p["beta"]
                + p["alpha"][c] @ spec.basis.basis_matrix[t])
    assert abs(Theta[c, t] - expected) < 1e-12
    assert abs(theta(p, spec, c, t) - expected) < 1e-12


def test_logp_fn_matches_reference_implementation():
    spec = small_spec()
    logp_fn, layout = make_logp_fn(spec)
    u = np.random.default_rng(5).uniform(-1, 1, layout.size)
    v1, g1 = logp_fn(u)
    v2, g2 = log_posterior(u, spec)
    assert abs(v1 - v2) < 1e-8
    np.testing.assert_allclose(g1, g2, rtol=1e-8)


def test_horseshoe_layout_has_shrinkage_blocks():
    hs = ParameterVector(small_spec())
    sub = ParameterVector(small_spec(PriorConfig(mode=SUBSETTED)))
    assert "log_lambda" in hs.slices and "log_tau" in hs.slices
    assert "beta_raw" in sub.slices and "log_lambda" not in sub.slices
    assert hs.size == sub.size + 2 * 3 + 2 - 3


def test_tau0_from_sparsity_guess():
    # five relevant out of sixteen covariates, unit-ish residual scale
    value = tau0_from_sparsity_guess(5, 16, 0.094, 1531)
    assert abs(value - 0.00109) < 1e-4
    with pytest.raises(ValueError):
        tau0_from_sparsity_guess(16, 16, 1.0, 100)


def test_subset_covariates_by_absolute_median():
    draws = np.zeros((500, 4))
    draws[:, 0] = 0.4
    draws[:, 1] = -0.03
    draws[:, 2] = 0.01
    draws[:, 3] = -0.025
    assert subset_covariates(draws, 0.025) == [0, 1, 3]
    with pytest.raises(ValueError):
        subset_covariates(draws * 0.0, 0.025)


def test_make_subsetted_spec():
    spec = small_spec()
    sub = make_subsetted_spec(spec, [0, 2])
    assert sub.covariate_names == ("a", "c")
    assert sub.X.shape[0] == 2
    assert sub.prior.mode == SUBSETTED
    with pytest.raises(ValueError):
        make_subsetted_spec(spec, [])


def test_prior_config_validation():
    with pytest.raises(ValueError):
        PriorConfig(mode="ridge")
    with pytest.raises(ValueError):
        PriorConfig(tau0=-1)
    assert PriorConfig().mode == HORSESHOE


def test_synthetic_dataset_matches_generative_structure():
    ds = make_dataset(seed=0)
    spec, truth = ds.spec, ds.truth
    assert spec.n_obs == 120 and spec.n_countries == 8 and spec.n_regions == 2
    assert np.max(np.abs(truth.alpha.sum(axis=1))) < 1e-10
    # observed log rates scatter around the true surface
    resid = spec.log_y - truth.theta[spec.obs_country, spec.obs_year]
    assert abs(np.median(resid)) < 0.2
