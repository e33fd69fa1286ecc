import numpy as np
import pytest
from scipy.special import logsumexp

from sbrest.validation import (
    HoldoutMode,
    LooResult,
    ValidationReport,
    elpd_compare,
    fit_generalized_pareto,
    holdout_split,
    interval_coverage,
    pareto_smooth,
    prediction_error,
    psis_loo,
)


class Obs:
    def __init__(self, id, country, year):
        self.id = id
        self.country = country
        self.year = year


@pytest.fixture
def observations():
    rng = np.random.default_rng(0)
    return [Obs(i, f"C{rng.integers(5)}", int(rng.integers(2000, 2020)))
            for i in range(50)]


def test_random20_is_disjoint_exhaustive_and_sized(observations):
    train, test = holdout_split(observations, HoldoutMode.Random20, replicate=0, seed=1)
    assert len(test) == 10
    ids = {o.id for o in train} | {o.id for o in test}
    assert ids == {o.id for o in observations}
    assert not ({o.id for o in train} & {o.id for o in test})


def test_random20_replicates_differ_but_are_deterministic(observations):
    a1 = holdout_split(observations, HoldoutMode.Random20, replicate=0, seed=1)
    a2 = holdout_split(observations, HoldoutMode.Random20, replicate=0, seed=1)
    b = holdout_split(observations, HoldoutMode.Random20, replicate=1, seed=1)
    assert [o.id for o in a1[1]] == [o.id for o in a2[1]]
    assert {o.id for o in a1[1]} != {o.id for o in b[1]}


def test_last_per_country_picks_latest(observations):
    train, test = holdout_split(observations, HoldoutMode.LastPerCountry)
    by_country = {}
    for o in observations:
        by_country.setdefault(o.country, []).append(o)
    assert len(test) == len(by_country)
    for o in test:
        latest = max(by_country[o.country], key=lambda x: (x.year, x.id))
        assert o.id == latest.id


def test_prediction_error_antisymmetry():
    assert prediction_error(4.0, 2.0, 0.5) == pytest.approx(
        -prediction_error(2.0, 4.0, 0.5))
    with pytest.raises(ValueError):
        prediction_error(-1.0, 2.0, 0.5)
    with pytest.raises(ValueError):
        prediction_error(1.0, 2.0, 0.0)


def test_interval_coverage_nominal_for_matching_predictive():
    rng = np.random.default_rng(2)
    n = 4000
    y = rng.normal(0, 1, n)
    draws = rng.normal(0, 1, (3000, n))
    report = interval_coverage(y, draws)
    for share, nominal in [(report.pct_below_5, 5), (report.pct_below_10, 10),
                           (report.pct_above_90, 10), (report.pct_above_95, 5)]:
        se = 100 * np.sqrt(nominal / 100 * (1 - nominal / 100) / n)
        assert abs(share - nominal) < 3 * se
    assert abs(report.mean_error) < 0.05


def test_interval_coverage_degenerate_predictive():
    y = np.zeros(5)
    draws = np.random.default_rng(0).normal(0, 1e-9, (100, 5)) + 0.0
    report = interval_coverage(y, draws)
    # predictive concentrated at the observations: nothing in the tails
    assert report.pct_below_5 + report.pct_above_95 <= 100.0
    assert report.n_test == 5


def test_validation_report_validation():
    with pytest.raises(ValueError):
        ValidationReport("x", 0, 0, -5, 0, 0, 0, 10)
    with pytest.raises(ValueError):
        ValidationReport("x", 0, 0, 5, 10, 10, 5, 0)


# -- PSIS-LOO ---------------------------------------------------------------


def normal_loglik(y, mus, sigma=1.0):
    return (-0.5 * np.log(2 * np.pi * sigma**2)
            - 0.5 * (y[None, :] - mus[:, None]) ** 2 / sigma**2)


def exact_normal_loo(y, prior_sd=10.0, sigma=1.0):
    """Closed-form LOO for y_i ~ N(mu, sigma^2), mu ~ N(0, prior_sd^2)."""
    n = len(y)
    out = np.empty(n)
    for i in range(n):
        rest = np.delete(y, i)
        prec = 1 / prior_sd**2 + len(rest) / sigma**2
        mu_post = (rest.sum() / sigma**2) / prec
        var_pred = sigma**2 + 1 / prec
        out[i] = -0.5 * np.log(2 * np.pi * var_pred) - 0.5 * (y[i] - mu_post) ** 2 / var_pred
    return out


def test_psis_loo_matches_conjugate_oracle():
    rng = np.random.default_rng(3)
    n, S = 50, 4000
    y = rng.normal(0.3, 1.0, n)
    # exact posterior draws of mu under the conjugate prior
    prec = 1 / 10.0**2 + n
    mu_post, sd_post = y.sum() / prec, np.sqrt(1 / prec)
    mus = rng.normal(mu_post, sd_post, S)
    loo = psis_loo(normal_loglik(y, mus))
    exact = exact_normal_loo(y).sum()
    assert abs(loo.elpd_loo - exact) < 2 * loo.se
    assert np.nanmax(loo.pareto_k) < 0.7


def test_psis_loo_duplicated_rows_get_equal_pointwise():
    rng = np.random.default_rng(4)
    y = np.array([1.0, 1.0, -0.5])
    mus = rng.normal(0, 0.3, 2000)
    loo = psis_loo(normal_loglik(y, mus))
    assert loo.pointwise[0] == pytest.approx(loo.pointwise[1])


def test_psis_loo_no_smoothing_matches_brute_force():
    rng = np.random.default_rng(5)
    y = rng.normal(0, 1, 3)
    mus = rng.normal(0, 0.1, 20)   # tail too small for smoothing
    ll = normal_loglik(y, mus)
    loo = psis_loo(ll)
    assert np.all(np.isnan(loo.pareto_k))
    for i in range(3):
        lw = -ll[:, i] - logsumexp(-ll[:, i])
        assert loo.pointwise[i] == pytest.approx(logsumexp(lw + ll[:, i]))


def test_pareto_smooth_small_sample_returns_nan_k():
    lw, k = pareto_smooth(np.zeros(10))
    assert np.isnan(k)
    np.testing.assert_array_equal(lw, np.zeros(10))


def test_fit_generalized_pareto_recovers_shape():
    rng = np.random.default_rng(6)
    k_true, sigma_true = 0.3, 2.0
    u = rng.random(4000)
    x = sigma_true / k_true * ((1 - u) ** (-k_true) - 1)
    k_hat, sigma_hat = fit_generalized_pareto(x)
    assert abs(k_hat - k_true) < 0.1
    assert abs(sigma_hat - sigma_true) / sigma_true < 0.15


def test_elpd_compare_identities():
    a = LooResult(elpd_loo=-10.0, se=1.0,
                  pointwise=np.array([-2.0, -3.0, -5.0]), pareto_k=np.zeros(3))
    d, lo, hi = elpd_compare(a, a)
    assert (d, lo, hi) == (0.0, 0.0, 0.0)
    b = LooResult(elpd_loo=-12.0, se=1.0,
                  pointwise=np.array([-3.0, -4.0, -5.0]), pareto_k=np.zeros(3))
    d1 = elpd_compare(a, b)
    d2 = elpd_compare(b, a)
    assert d1[0] == -d2[0] and d1[1] == -d2[2] and d1[2] == -d2[1]
    with pytest.raises(ValueError):
        elpd_compare(a, LooResult(0, 0, np.zeros(2), np.zeros(2)))
