"""Observation-level variances of log rates.

Three sources of error variance feed the data and screening models:

* a Poisson delta-method variance for log SBR from registration-type counts,
* a Monte Carlo variance for the log SBR:NMR ratio from paired binomial
  counts, and
* imputation of the worst observed error for observations whose survey
  standard error is missing.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

DEFAULT_MC_SAMPLES = 100_000


def log_sbr_variance(total_births: float, sbr_rate: float) -> float:
    """Delta-method variance of log(y) under a Poisson count model.

    ``sbr_rate`` is a fraction (deaths / births), so the result is
    1 / (B * y), equivalently 1 / D.
    """
    if total_births <= 0:
        raise ValueError("total_births must be positive")
    if sbr_rate <= 0:
        raise ValueError("sbr_rate must be positive")
    return 1.0 / (total_births * sbr_rate)


@dataclass(frozen=True)
class RatioVarianceInput:
    """Counts feeding the Monte Carlo log-ratio variance."""

    stillbirth_count: int
    total_births: int
    neonatal_deaths: int
    live_births: int
    n_samples: int = DEFAULT_MC_SAMPLES
    seed: int = 0

    def __post_init__(self):
        if not self.total_births >= self.stillbirth_count >= 0:
            raise ValueError("need total_births >= stillbirth_count >= 0")
        if not self.live_births >= self.neonatal_deaths >= 0:
            raise ValueError("need live_births >= neonatal_deaths >= 0")
        if self.n_samples < 1000:
            raise ValueError("n_samples must be at least 1000")


@dataclass(frozen=True)
class RatioVarianceResult:
    v2: float                 # sample variance of the simulated log ratios
    rejected_fraction: float  # share of draws redrawn because of a zero count


def mc_log_ratio_variance(inp: RatioVarianceInput) -> RatioVarianceResult:
    """Monte Carlo variance of the log SBR:NMR ratio.

    Observed rates plug in as binomial probabilities. Zero-count draws (whose
    log ratio is undefined) are rejected and redrawn; the rejected fraction is
    reported alongside the variance. Deterministic given the seed.
    """
    if inp.stillbirth_count == 0 or inp.neonatal_deaths == 0:
        raise ValueError("ratio variance undefined for zero stillbirth or neonatal counts")
    p_sb = inp.stillbirth_count / inp.total_births
    p_nd = inp.neonatal_deaths / inp.live_births
    rng = np.random.default_rng(inp.seed)

    z = rng.binomial(inp.total_births, p_sb, inp.n_samples).astype(float)
    m = rng.binomial(inp.live_births, p_nd, inp.n_samples).astype(float)
    n_rejected = 0
    while True:
        bad = (z == 0) | (m == 0)
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        n_rejected += n_bad
        z[bad] = rng.binomial(inp.total_births, p_sb, n_bad)
        m[bad] = rng.binomial(inp.live_births, p_nd, n_bad)
    log_ratio = np.log((z / inp.total_births) / (m / inp.live_births))
    return RatioVarianceResult(
        v2=float(log_ratio.var(ddof=1)),
        rejected_fraction=n_rejected / (inp.n_samples + n_rejected),
    )


def delta_log_ratio_variance(inp: RatioVarianceInput) -> float:
    """Closed-form delta-method counterpart of :func:`mc_log_ratio_variance`."""
    p_sb = inp.stillbirth_count / inp.total_births
    p_nd = inp.neonatal_deaths / inp.live_births
    return (1 - p_sb) / (inp.total_births * p_sb) + (1 - p_nd) / (inp.live_births * p_nd)


def impute_max_error(observations):
    """Fill missing log-scale standard errors with the source-type maximum.

    Every observation with a known standard error is left untouched; an
    observation with a missing one receives the largest known standard error
    among observations of the same source type. Raises when a needed source
    type has no known standard error at all.
    """
    max_by_source = {}
    for obs in observations:
        if obs.log_se is not None:
            key = obs.source_type
            max_by_source[key] = max(max_by_source.get(key, -np.inf), obs.log_se)

    missing_types = sorted(
        {o.source_type.name for o in observations if o.log_se is None}
        - {s.name for s in max_by_source}
    )
    if missing_types:
        raise ValueError(
            f"no known standard error for source type(s): {', '.join(missing_types)}"
        )
    return [
        obs if obs.log_se is not None else replace(obs, log_se=max_by_source[obs.source_type])
        for obs in observations
    ]
