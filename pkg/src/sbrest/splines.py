"""Equally spaced quadratic B-spline basis with a first-difference penalty structure.

The basis covers an integer-year estimation window with knots at every integer
year. The knot grid is extended beyond the window so that every estimation year
lies in the interior of the basis support, which gives a full partition of
unity over the window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEGREE = 2  # quadratic


@dataclass(frozen=True)
class SplineBasis:
    """Quadratic B-spline basis over an integer-year window.

    Attributes
    ----------
    year_start, year_end : first and last estimation year (inclusive).
    knots : full (extended) knot grid, unit spacing.
    n_basis : number of basis functions H.
    basis_matrix : (T, H) evaluations of each basis function at each year.
    diff_matrix : (H-1, H) first-difference operator on coefficients.
    """

    year_start: int
    year_end: int
    knots: np.ndarray
    n_basis: int
    basis_matrix: np.ndarray
    diff_matrix: np.ndarray
    years: np.ndarray = field(default=None)

    def row(self, year) -> np.ndarray:
        """Basis evaluations for one (possibly fractional) year."""
        year = float(year)
        if not self.year_start <= year <= self.year_end:
            raise ValueError(
                f"year {year} outside the window {self.year_start}-{self.year_end}"
            )
        return _eval_basis(self.knots, self.n_basis, np.atleast_1d(year))[0]


def _bspline_value(knots: np.ndarray, h: int, degree: int, t: float) -> float:
    """Cox-de Boor recursion for the h-th B-spline of the given degree."""
    if degree == 0:
        return 1.0 if knots[h] <= t < knots[h + 1] else 0.0
    left = 0.0
    denom = knots[h + degree] - knots[h]
    if denom > 0:
        left = (t - knots[h]) / denom * _bspline_value(knots, h, degree - 1, t)
    right = 0.0
    denom = knots[h + degree + 1] - knots[h + 1]
    if denom > 0:
        right = (knots[h + degree + 1] - t) / denom * _bspline_value(knots, h + 1, degree - 1, t)
    return left + right


def _eval_basis(knots: np.ndarray, n_basis: int, ts: np.ndarray) -> np.ndarray:
    out = np.zeros((len(ts), n_basis))
    for i, t in enumerate(ts):
        for h in range(n_basis):
            out[i, h] = _bspline_value(knots, h, DEGREE, t)
    return out


def build_basis(year_start: int, year_end: int) -> SplineBasis:
    """Build the quadratic basis for the window [year_start, year_end].

    Knots are placed at every integer year with the grid extended by
    ``DEGREE`` extra knots on each side, so every year in the window is an
    interior point and the basis sums to one there. The number of basis
    functions is H = (number of interior intervals) + DEGREE.
    """
    if year_end - year_start < 1:
        raise ValueError("estimation window must span at least 2 years")
    # unit-spaced knots, extended so all window years are interior
    knots = np.arange(year_start - DEGREE, year_end + DEGREE + 1, dtype=float)
    n_basis = len(knots) - DEGREE - 1
    years = np.arange(year_start, year_end + 1, dtype=float)
    basis_matrix = _eval_basis(knots, n_basis, years)
    diff_matrix = np.diff(np.eye(n_basis), axis=0)
    return SplineBasis(
        year_start=year_start,
        year_end=year_end,
        knots=knots,
        n_basis=n_basis,
        basis_matrix=basis_matrix,
        diff_matrix=diff_matrix,
        years=years,
    )


def smoother_value(alpha: np.ndarray, basis: SplineBasis, year) -> float:
    """Smoother value sum_h k_h(t) * alpha_h for one country at one year."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.shape[-1] != basis.n_basis:
        raise ValueError(
            f"coefficient vector has length {alpha.shape[-1]}, expected {basis.n_basis}"
        )
    return float(np.dot(basis.row(year), alpha))
