"""Holdout validation and approximate leave-one-out cross-validation.

Demonstrates the two holdout exercises, predictive-interval calibration,
and PSIS-LOO with its Pareto-k diagnostics on a conjugate normal example
where exact leave-one-out is available in closed form.
"""

import numpy as np

from sbrest.synthetic import make_dataset
from sbrest.validation import (
    HoldoutMode,
    elpd_compare,
    holdout_split,
    interval_coverage,
    psis_loo,
)

ds = make_dataset(seed=3)
train, test = holdout_split(ds.observations, HoldoutMode.Random20, replicate=0, seed=5)
print(f"Random20 split: {len(train)} train, {len(test)} test")
train, test = holdout_split(ds.observations, HoldoutMode.LastPerCountry)
print(f"LastPerCountry split: holds out {len(test)} latest observations")

# a predictive that matches the data-generating process is calibrated
rng = np.random.default_rng(0)
y = rng.normal(0, 1, 500)
pred = rng.normal(0, 1, (2000, 500))
report = interval_coverage(y, pred, exercise="demo")
print(f"\ncalibration demo (nominal 5/10/10/5): "
      f"{report.pct_below_5:.1f}/{report.pct_below_10:.1f}/"
      f"{report.pct_above_90:.1f}/{report.pct_above_95:.1f}")

# PSIS-LOO vs exact leave-one-out for a conjugate normal-mean model
n, S, prior_sd = 50, 4000, 10.0
y = rng.normal(0.4, 1.0, n)
prec = 1 / prior_sd**2 + n
mus = rng.normal(y.sum() / prec, np.sqrt(1 / prec), S)
loglik = -0.5 * np.log(2 * np.pi) - 0.5 * (y[None, :] - mus[:, None]) ** 2
loo = psis_loo(loglik)

exact = 0.0
for i in range(n):
    rest = np.delete(y, i)
    prec_i = 1 / prior_sd**2 + n - 1
    var_i = 1.0 + 1 / prec_i
    exact += (-0.5 * np.log(2 * np.pi * var_i)
              - 0.5 * (y[i] - rest.sum() / prec_i) ** 2 / var_i)
print(f"\nPSIS-LOO elpd: {loo.elpd_loo:.2f} +- {loo.se:.2f} (exact {exact:.2f})")
print(f"max Pareto k: {np.nanmax(loo.pareto_k):.2f} (reliable below 0.7)")

# model comparison: a deliberately worse model loses decisively
loglik_bad = -0.5 * np.log(2 * np.pi) - 0.5 * (y[None, :] - mus[:, None] - 1.0) ** 2
loo_bad = psis_loo(loglik_bad)
d, lo, hi = elpd_compare(loo, loo_bad)
print(f"elpd difference vs shifted model: {d:.1f} (95% interval {lo:.1f} to {hi:.1f})")
