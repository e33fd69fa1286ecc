"""Out-of-sample validation exercises and approximate leave-one-out CV.

Holdout splitting (random 20% and last-observation-per-country), standardized
log-scale prediction errors, predictive-interval tail shares, and PSIS-LOO
with the Zhang-Stephens generalized Pareto fit for the importance-weight tail.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp


class HoldoutMode(enum.Enum):
    Random20 = "Random20"
    LastPerCountry = "LastPerCountry"


def holdout_split(observations, mode: HoldoutMode, replicate: int = 0, seed: int = 0):
    """Split observations into (train, test).

    Random20 draws round(0.2 n) observations uniformly without replacement,
    deterministically given (seed, replicate). LastPerCountry holds out each
    country's latest observation, ties broken by largest id.
    """
    observations = list(observations)
    if not observations:
        raise ValueError("no observations to split")
    if mode is HoldoutMode.Random20:
        rng = np.random.default_rng(np.random.SeedSequence((seed, replicate)))
        n_test = int(round(0.2 * len(observations)))
        test_idx = set(rng.choice(len(observations), size=n_test, replace=False).tolist())
    elif mode is HoldoutMode.LastPerCountry:
        latest = {}
        for i, obs in enumerate(observations):
            key = obs.country
            if key not in latest:
                latest[key] = i
            else:
                cur = observations[latest[key]]
                if (obs.year, obs.id) > (cur.year, cur.id):
                    latest[key] = i
        test_idx = set(latest.values())
    else:
        raise ValueError(f"unknown holdout mode {mode!r}")
    train = [o for i, o in enumerate(observations) if i not in test_idx]
    test = [o for i, o in enumerate(observations) if i in test_idx]
    return train, test


def prediction_error(y: float, pred_median: float, pred_sd: float) -> float:
    """Standardized log-scale residual (log y - log median) / sd."""
    if y <= 0 or pred_median <= 0:
        raise ValueError("observed and predicted values must be positive")
    if pred_sd <= 0:
        raise ValueError("predictive sd must be positive")
    return (np.log(y) - np.log(pred_median)) / pred_sd


@dataclass
class ValidationReport:
    """Prediction-error and tail-coverage summary for one exercise."""

    exercise: str
    mean_error: float
    mean_abs_error: float
    pct_below_5: float
    pct_below_10: float
    pct_above_90: float
    pct_above_95: float
    n_test: int

    def __post_init__(self):
        if self.n_test <= 0:
            raise ValueError("n_test must be positive")
        for name in ("pct_below_5", "pct_below_10", "pct_above_90", "pct_above_95"):
            v = getattr(self, name)
            if not 0 <= v <= 100:
                raise ValueError(f"{name} outside [0, 100]: {v}")

    def row(self):
        return [
            self.exercise,
            f"{self.mean_error:.4f}",
            f"{self.mean_abs_error:.4f}",
            f"{self.pct_below_5:.1f}",
            f"{self.pct_below_10:.1f}",
            f"{self.pct_above_90:.1f}",
            f"{self.pct_above_95:.1f}",
            str(self.n_test),
        ]

    HEADER = [
        "exercise", "mean_error", "mean_abs_error",
        "below_5", "below_10", "above_90", "above_95", "n_test",
    ]


def interval_coverage(log_y_test: np.ndarray, predictive_log_draws: np.ndarray,
                      exercise: str = "Random") -> ValidationReport:
    """Tail shares and standardized errors of test points under the predictive.

    ``predictive_log_draws`` has shape (n_draws, n_test) and must include the
    full data-model noise and bias terms for each held-out observation.
    """
    log_y = np.asarray(log_y_test, dtype=float)
    draws = np.asarray(predictive_log_draws, dtype=float)
    if draws.shape[1] != len(log_y):
        raise ValueError("draws and test observations misaligned")
    q5, q10, q90, q95 = np.quantile(draws, [0.05, 0.10, 0.90, 0.95], axis=0)
    med = np.median(draws, axis=0)
    sd = draws.std(axis=0, ddof=1)
    errors = (log_y - med) / sd
    return ValidationReport(
        exercise=exercise,
        mean_error=float(errors.mean()),
        mean_abs_error=float(np.abs(errors).mean()),
        pct_below_5=100.0 * float((log_y < q5).mean()),
        pct_below_10=100.0 * float((log_y < q10).mean()),
        pct_above_90=100.0 * float((log_y > q90).mean()),
        pct_above_95=100.0 * float((log_y > q95).mean()),
        n_test=len(log_y),
    )


# ---------------------------------------------------------------------------
# PSIS-LOO

MIN_TAIL = 5


def fit_generalized_pareto(x: np.ndarray):
    """Zhang-Stephens (2009) profile-posterior estimate of (k, sigma).

    ``x`` are exceedances above the tail cutoff (positive values).
    """
    y = np.sort(np.asarray(x, dtype=float))
    n = len(y)
    m = 30 + int(np.sqrt(n))
    b = 1.0 - np.sqrt(m / (np.arange(1, m + 1) - 0.5))
    b = b / (3.0 * y[(n - 1) // 4]) + 1.0 / y[-1]
    k = -np.mean(np.log1p(-b[:, None] * y), axis=1)
    log_lik = n * (np.log(b / k) + k - 1.0)
    with np.errstate(over="ignore"):
        weights = 1.0 / np.exp(log_lik - log_lik[:, None]).sum(axis=1)
    b_star = np.sum(b * weights)
    # shape on the standard scale: xi = -k of the profile parameterization
    xi = np.mean(np.log1p(-b_star * y))
    sigma = -xi / b_star
    # weakly informative regularization of the shape toward 0.5
    xi = (n * xi + 5.0) / (n + 10.0)
    return float(xi), float(sigma)


def pareto_smooth(log_weights: np.ndarray):
    """Smooth the largest importance weights with a generalized Pareto fit.

    Returns (smoothed log weights, k_hat). The tail size is
    min(0.2 S, 3 sqrt(S)); with fewer than MIN_TAIL tail samples the weights
    are returned unsmoothed and k_hat is NaN.
    """
    lw = np.asarray(log_weights, dtype=float).copy()
    S = len(lw)
    M = int(min(0.2 * S, 3.0 * np.sqrt(S)))
    if M < MIN_TAIL:
        return lw, float("nan")
    lw_max = lw.max()
    order = np.argsort(lw)
    tail_idx = order[-M:]
    cutoff = np.exp(lw[order[-M - 1]] - lw_max)
    exceedances = np.exp(lw[tail_idx] - lw_max) - cutoff
    if np.allclose(exceedances, 0):
        return lw, float("nan")
    k_hat, sigma = fit_generalized_pareto(exceedances)
    # replace tail weights by expected order statistics of the fitted GPD
    p = (np.arange(1, M + 1) - 0.5) / M
    if abs(k_hat) < 1e-12:
        quantiles = cutoff - sigma * np.log1p(-p)
    else:
        quantiles = cutoff + sigma / k_hat * ((1.0 - p) ** (-k_hat) - 1.0)
    quantiles = np.minimum(quantiles, np.exp(lw[order[-1]] - lw_max))
    lw[tail_idx[np.argsort(lw[tail_idx])]] = np.log(quantiles) + lw_max
    return lw, float(k_hat)


@dataclass
class LooResult:
    """PSIS-LOO expected log pointwise predictive density."""

    elpd_loo: float
    se: float
    pointwise: np.ndarray
    pareto_k: np.ndarray

    @property
    def n(self):
        return len(self.pointwise)


def psis_loo(loglik: np.ndarray) -> LooResult:
    """PSIS-LOO from a (n_draws, n_obs) matrix of pointwise log likelihoods."""
    loglik = np.asarray(loglik, dtype=float)
    if loglik.ndim != 2:
        raise ValueError("loglik must be (n_draws, n_obs)")
    S, n = loglik.shape
    pointwise = np.empty(n)
    ks = np.empty(n)
    for i in range(n):
        lw, k = pareto_smooth(-loglik[:, i])
        lw = lw - logsumexp(lw)
        pointwise[i] = logsumexp(lw + loglik[:, i])
        ks[i] = k
    return LooResult(
        elpd_loo=float(pointwise.sum()),
        se=float(np.sqrt(n * pointwise.var(ddof=1))),
        pointwise=pointwise,
        pareto_k=ks,
    )


def elpd_compare(a: LooResult, b: LooResult):
    """Paired ELPD difference a - b with a 95% normal interval.

    Returns (difference, lower, upper).
    """
    if a.n != b.n:
        raise ValueError("LOO results cover different numbers of observations")
    diff = a.pointwise - b.pointwise
    d = float(diff.sum())
    se = float(np.sqrt(a.n * diff.var(ddof=1)))
    return d, d - 1.96 * se, d + 1.96 * se
