import numpy as np
import pytest
from hypothesis import given, strategies as st

from sbrest.splines import build_basis, smoother_value


@pytest.fixture(scope="module")
def basis():
    return build_basis(2000, 2019)


def test_basis_dimension_is_years_plus_one(basis):
    assert basis.basis_matrix.shape == (20, 21)
    assert basis.n_basis == 21


def test_partition_of_unity_at_data_years(basis):
    sums = basis.basis_matrix.sum(axis=1)
    assert np.max(np.abs(sums - 1.0)) < 1e-12


@given(st.floats(min_value=2000.0, max_value=2019.0))
def test_partition_of_unity_everywhere(t):
    basis = build_basis(2000, 2019)
    assert abs(basis.row(t).sum() - 1.0) < 1e-12


def test_linear_reproduction(basis):
    # coefficients at Greville abscissae reproduce a straight line exactly
    knots = basis.knots
    degree = 2
    greville = np.array([
        knots[h + 1: h + 1 + degree].mean() for h in range(basis.n_basis)
    ])
    line = 3.0 * greville + 1.0
    values = basis.basis_matrix @ line
    expected = 3.0 * np.arange(2000, 2020) + 1.0
    assert np.max(np.abs(values - expected)) < 1e-10


def test_quadratic_uniform_values(basis):
    # at a knot, the two straddling quadratic B-splines each evaluate to 1/2
    row = basis.row(2005.0)
    nonzero = np.sort(row[row > 1e-14])
    assert np.allclose(nonzero, [0.5, 0.5], atol=1e-12)
    # at a midpoint, the central basis function peaks at 3/4
    assert abs(basis.row(2005.5).max() - 0.75) < 1e-12


def test_rows_match_matrix(basis):
    for t, year in enumerate(range(2000, 2020)):
        assert np.allclose(basis.row(year), basis.basis_matrix[t])


def test_smoother_value_interpolates(basis):
    rng = np.random.default_rng(0)
    alpha = rng.normal(size=basis.n_basis)
    curve = basis.basis_matrix @ alpha
    assert abs(smoother_value(alpha, basis, 2003) - curve[3]) < 1e-12


def test_smoother_value_outside_window_errors(basis):
    with pytest.raises(ValueError):
        smoother_value(np.zeros(basis.n_basis), basis, 1999.0)


def test_diff_matrix_is_first_differences(basis):
    alpha = np.arange(basis.n_basis, dtype=float)
    assert np.allclose(basis.diff_matrix @ alpha, np.ones(basis.n_basis - 1))


def test_window_too_short_errors():
    with pytest.raises(ValueError):
        build_basis(2000, 2000)
