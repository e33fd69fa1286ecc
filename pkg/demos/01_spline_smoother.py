"""Quadratic B-spline basis and the random-walk smoother.

Shows the basis identities the temporal smoother relies on (partition of
unity, knot and midpoint values) and draws a few smoother curves with an
exact per-country sum-to-zero constraint.
"""

import numpy as np

from sbrest.splines import build_basis, smoother_value

basis = build_basis(2000, 2019)
print(f"window 2000-2019: {basis.basis_matrix.shape[0]} years, "
      f"{basis.n_basis} basis functions")

# the basis sums to one everywhere in the window
sums = basis.basis_matrix.sum(axis=1)
print(f"partition of unity: max |sum - 1| = {np.abs(sums - 1).max():.2e}")

# at an integer year only two functions are active, each equal to 1/2;
# halfway between knots the central function peaks at 3/4
row = basis.row(2010.0)
print("active at a knot:", np.round(row[row > 1e-12], 3))
print("peak at a midpoint:", round(basis.row(2010.5).max(), 3))

# a smoother curve: random-walk increments, centered to sum to zero
rng = np.random.default_rng(0)
increments = 0.05 * rng.standard_normal(basis.n_basis - 1)
walk = np.concatenate([[0.0], np.cumsum(increments)])
alpha = walk - walk.mean()
print(f"sum-to-zero: sum(alpha) = {alpha.sum():.2e}")

curve = [smoother_value(alpha, basis, year) for year in range(2000, 2020)]
print("smoother values by year:")
for year, value in zip(range(2000, 2020), curve):
    bar = "#" * int(40 * (value - min(curve)) / (max(curve) - min(curve) + 1e-12))
    print(f"  {year}  {value:+.3f}  {bar}")
