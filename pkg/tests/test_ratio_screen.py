import numpy as np
import pytest

from sbrest.ratio_screen import (
    RatioModelFit,
    apply_exclusion,
    exclusion_tail_probability,
    fit_ratio_model,
)
from sbrest.sampler import SamplerConfig
from sbrest.synthetic import make_hq_ratios

# posterior point estimates used as a frozen reference fit in the fast tests
REFERENCE = RatioModelFit(
    mu_theta=-0.180,
    mu_interval=(-0.25, -0.11),
    sigma2_theta=0.083,
    draws=np.zeros((1, 2)),
)


def test_exclusion_boundary_identity():
    # exp(mu + Phi^-1(0.05) * sigma) with mu=-0.180, sigma^2=0.083
    assert REFERENCE.exclusion_boundary(0.05) == pytest.approx(0.52, abs=0.01)


def test_tail_probability_monotone_in_ratio():
    ps = [exclusion_tail_probability(r, 0.0, REFERENCE) for r in (0.3, 0.5, 0.8, 1.2)]
    assert ps == sorted(ps)
    assert ps[0] < 0.05 < ps[2]


def test_tail_probability_widens_with_observation_variance():
    # below the mean: extra variance pulls the tail probability up
    low = exclusion_tail_probability(0.4, 0.0, REFERENCE)
    high = exclusion_tail_probability(0.4, 0.5, REFERENCE)
    assert high > low


def test_boundary_observation_is_kept_just_above():
    boundary = REFERENCE.exclusion_boundary(0.05)
    assert exclusion_tail_probability(boundary * 1.01, 0.0, REFERENCE) > 0.05
    assert exclusion_tail_probability(boundary * 0.99, 0.0, REFERENCE) < 0.05


def test_fit_recovers_simulated_hyperparameters():
    hq = make_hq_ratios(n=200, mu=-0.18, sigma2=0.083, v2=0.005, seed=4)
    fit = fit_ratio_model(hq, SamplerConfig(n_chains=2, n_iter=800, n_warmup=300, seed=0))
    assert fit.mu_interval[0] < -0.18 < fit.mu_interval[1]
    assert abs(fit.sigma2_theta - 0.083) < 0.04


def test_fit_input_validation():
    with pytest.raises(ValueError):
        fit_ratio_model([(1.0, 0.01)])
    with pytest.raises(ValueError):
        fit_ratio_model([(-1.0, 0.01), (1.0, 0.01)])


class Row:
    def __init__(self, id, sbr, nmr):
        self.id = id
        self.sbr = sbr
        self.nmr = nmr


def test_apply_exclusion_partitions():
    rows = [Row(1, 5.0, 6.0), Row(2, 2.0, 8.0), Row(3, 4.0, None)]
    result = apply_exclusion(rows, REFERENCE, nmr_source_policy=lambda o: o.nmr)
    assert [s.observation.id for s in result.kept] == [1]
    assert [s.observation.id for s in result.excluded] == [2]
    assert [o.id for o in result.cannot_screen] == [3]
    assert len(result.kept) + len(result.excluded) + len(result.cannot_screen) == 3
    assert result.p_by_id[2] < 0.05 <= result.p_by_id[1]


def test_apply_exclusion_respects_value_overrides():
    rows = [Row(1, 2.0, 8.0)]
    # the adjusted rate (x3) moves the observation above the boundary
    result = apply_exclusion(rows, REFERENCE, nmr_source_policy=lambda o: o.nmr,
                             sbr_of=lambda o: o.sbr * 3.0)
    assert len(result.kept) == 1
