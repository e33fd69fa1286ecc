"""Exclusion of observations with implausibly low SBR:NMR ratios.

A normal hierarchy is fitted to log ratios from designated high-quality
studies: each observed log-ratio is a setting-specific expected log-ratio
plus known-variance noise, and the expected log-ratios are exchangeable
normal across settings. Observations are then excluded when their observed
ratio falls in the lower tail of the fitted predictive distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

import jax
import jax.numpy as jnp
from scipy import stats

from .sampler import SamplerConfig, sample

# degenerate reported variances are floored to keep the likelihood proper
MIN_V2 = 1e-10

DEFAULT_THRESHOLD = 0.05


@dataclass
class RatioModelFit:
    """Posterior summaries of the log SBR:NMR ratio distribution."""

    mu_theta: float             # posterior median of the mean log-ratio
    mu_interval: tuple          # 95% interval for the mean log-ratio
    sigma2_theta: float         # posterior median of the across-setting variance
    draws: np.ndarray           # (n_draws, 2) pooled draws of (mu, sigma2)

    def __post_init__(self):
        if self.sigma2_theta <= 0:
            raise ValueError("sigma2_theta must be positive")
        if not self.mu_interval[0] <= self.mu_interval[1]:
            raise ValueError("interval bounds out of order")

    def exclusion_boundary(self, threshold=DEFAULT_THRESHOLD) -> float:
        """Ratio below which a zero-variance observation is excluded."""
        z = stats.norm.ppf(threshold)
        return float(np.exp(self.mu_theta + z * math.sqrt(self.sigma2_theta)))


def fit_ratio_model(hq_data, config: SamplerConfig | None = None,
                    mu_prior_sd=10.0) -> RatioModelFit:
    """Fit the normal hierarchy to high-quality (ratio, error variance) pairs.

    Priors: mean log-ratio ~ N(0, mu_prior_sd^2), across-setting sd ~ N+(0, 1).
    Setting effects are sampled non-centered alongside the hyperparameters.
    """
    hq_data = list(hq_data)
    if len(hq_data) < 2:
        raise ValueError("need at least 2 high-quality observations")
    r = np.array([x[0] for x in hq_data], dtype=float)
    v2 = np.array([x[1] for x in hq_data], dtype=float)
    if np.any(r <= 0) or np.any(v2 < 0):
        raise ValueError("ratios must be positive and variances non-negative")
    log_r = jnp.asarray(np.log(r))
    v2j = jnp.asarray(np.maximum(v2, MIN_V2))
    n = len(r)

    def log_density(u):
        mu, log_sigma = u[0], u[1]
        z = u[2:]
        sigma = jnp.exp(log_sigma)
        theta = mu + sigma * z
        lp = -0.5 * (mu / mu_prior_sd) ** 2
        lp += -0.5 * sigma**2 + log_sigma          # half-normal sd + Jacobian
        lp += -0.5 * jnp.sum(z**2)
        lp += jnp.sum(-0.5 * jnp.log(v2j) - 0.5 * (log_r - theta) ** 2 / v2j)
        return lp

    vg = jax.jit(jax.value_and_grad(log_density))

    def logp_fn(u):
        v, g = vg(u)
        v = v.item()
        if not math.isfinite(v):
            return -math.inf, np.zeros_like(u)
        return v, np.asarray(g)

    config = config or SamplerConfig(n_chains=4, n_iter=1500, n_warmup=500)
    draws = sample(logp_fn, config, dim=2 + n)
    flat = draws.flat()
    mu = flat[:, 0]
    sigma2 = np.exp(flat[:, 1]) ** 2
    return RatioModelFit(
        mu_theta=float(np.median(mu)),
        mu_interval=(float(np.quantile(mu, 0.025)), float(np.quantile(mu, 0.975))),
        sigma2_theta=float(np.median(sigma2)),
        draws=np.column_stack([mu, sigma2]),
    )


def exclusion_tail_probability(r: float, v2: float, fit: RatioModelFit) -> float:
    """One-sided tail probability of a ratio at least as low as ``r``.

    Uses the point estimates of the fitted mean and across-setting variance;
    the predictive sd widens with the observation's own error variance.
    """
    if r <= 0:
        raise ValueError("ratio must be positive")
    sd = math.sqrt(fit.sigma2_theta + max(v2, 0.0))
    return float(stats.norm.cdf((math.log(r) - fit.mu_theta) / sd))


@dataclass
class ScreenedObservation:
    observation: object
    ratio: float
    v2: float
    p: float


@dataclass
class ScreenResult:
    kept: list = field(default_factory=list)
    excluded: list = field(default_factory=list)      # ScreenedObservation
    cannot_screen: list = field(default_factory=list)

    @property
    def p_by_id(self):
        out = {}
        for s in self.kept + self.excluded:
            out[s.observation.id] = s.p
        return out


def apply_exclusion(observations, fit: RatioModelFit, nmr_source_policy,
                    v2_of=None, sbr_of=None,
                    threshold=DEFAULT_THRESHOLD) -> ScreenResult:
    """Partition observations by the tail-probability exclusion rule.

    ``nmr_source_policy(obs)`` resolves the NMR for the ratio: typically the
    observation's own same-source NMR when present, falling back to a national
    estimate; returning None routes the observation to the cannot-screen
    bucket. ``sbr_of`` lets the caller screen adjusted SBR values (used for
    alternative-definition observations after definitional adjustment), and
    ``v2_of`` supplies the per-observation log-ratio error variance
    (default 0).
    """
    result = ScreenResult()
    for obs in observations:
        nmr = nmr_source_policy(obs)
        if nmr is None or nmr <= 0:
            result.cannot_screen.append(obs)
            continue
        sbr = sbr_of(obs) if sbr_of is not None else obs.sbr
        v2 = v2_of(obs) if v2_of is not None else 0.0
        ratio = sbr / nmr
        p = exclusion_tail_probability(ratio, v2, fit)
        screened = ScreenedObservation(observation=obs, ratio=ratio, v2=v2, p=p)
        if p < threshold:
            result.excluded.append(screened)
        else:
            result.kept.append(screened)
    return result
