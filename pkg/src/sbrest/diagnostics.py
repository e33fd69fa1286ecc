"""Convergence diagnostics: rank-normalized split R-hat and bulk/tail ESS.

Implements the improved potential scale reduction and effective sample size
calculations of Vehtari et al. (2021): chains are split in half, draws are
rank-normalized via the inverse normal CDF, and autocorrelations are combined
with Geyer's initial monotone positive sequence.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import stats


def _split_chains(chains: np.ndarray) -> np.ndarray:
    """Split each chain in half. chains: (n_chains, n_draws) -> (2*n_chains, n//2)."""
    n = chains.shape[1] // 2
    return np.concatenate([chains[:, :n], chains[:, n : 2 * n]], axis=0)


def _rank_normalize(chains: np.ndarray) -> np.ndarray:
    """Rank-normalize pooled draws, preserving the chain layout."""
    flat = chains.ravel()
    ranks = stats.rankdata(flat, method="average")
    z = stats.norm.ppf((ranks - 3.0 / 8.0) / (flat.size + 1.0 / 4.0))
    return z.reshape(chains.shape)


def _is_constant(chains: np.ndarray) -> bool:
    return np.allclose(chains, chains.ravel()[0])


def _rhat_basic(chains: np.ndarray) -> float:
    """Classic potential scale reduction on already split/transformed chains."""
    m, n = chains.shape
    chain_means = chains.mean(axis=1)
    within = chains.var(axis=1, ddof=1).mean()
    between = n * chain_means.var(ddof=1)
    var_hat = (n - 1) / n * within + between / n
    return float(np.sqrt(var_hat / within))


def split_rhat(chains: np.ndarray) -> float:
    """Rank-normalized split R-hat for one parameter.

    Parameters
    ----------
    chains : array (n_chains, n_draws) of post-warmup draws.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2:
        raise ValueError("need draws from at least 2 chains, shape (n_chains, n_draws)")
    if chains.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    if _is_constant(chains):
        warnings.warn("parameter is constant across all draws; R-hat undefined")
        return float("nan")
    return _rhat_basic(_split_chains(_rank_normalize(chains)))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance estimate via FFT for one chain."""
    n = len(x)
    x = x - x.mean()
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real
    return acov / n


def _ess_from_chains(chains: np.ndarray) -> float:
    """ESS of split chains using Geyer's initial monotone positive sequence."""
    m, n = chains.shape
    acovs = np.stack([_autocovariance(c) for c in chains])
    chain_var = acovs[:, 0] * n / (n - 1.0)
    within = chain_var.mean()
    mean_acov = acovs.mean(axis=0)
    var_hat = within * (n - 1.0) / n
    if m > 1:
        var_hat += chains.mean(axis=1).var(ddof=1)
    if var_hat <= 0:
        return float("nan")

    # paired sums of autocorrelations (Geyer 1992)
    rho = 1.0 - (within - mean_acov) / var_hat
    rho[0] = 1.0
    max_pairs = (n - 2) // 2
    pair_sums = []
    for k in range(max_pairs):
        s = rho[2 * k] + rho[2 * k + 1]
        if s <= 0:
            break
        pair_sums.append(s)
    # enforce monotone decrease
    for k in range(1, len(pair_sums)):
        pair_sums[k] = min(pair_sums[k], pair_sums[k - 1])
    tau = -1.0 + 2.0 * sum(pair_sums) if pair_sums else 1.0
    tau = max(tau, 1.0 / np.log10(m * n + 10.0))
    return float(m * n / tau)


def ess(chains: np.ndarray, kind: str = "bulk") -> float:
    """Bulk or tail effective sample size for one parameter.

    Bulk ESS is computed on rank-normalized split chains. Tail ESS is the
    minimum of the ESS of the 5% and 95% quantile exceedance indicators.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2:
        raise ValueError("need draws from at least 2 chains, shape (n_chains, n_draws)")
    if chains.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    if _is_constant(chains):
        warnings.warn("parameter is constant across all draws; ESS undefined")
        return float("nan")
    if kind == "bulk":
        return _ess_from_chains(_split_chains(_rank_normalize(chains)))
    if kind == "tail":
        q05, q95 = np.quantile(chains, [0.05, 0.95])
        lower = _ess_from_chains(_split_chains((chains <= q05).astype(float)))
        upper = _ess_from_chains(_split_chains((chains >= q95).astype(float)))
        return min(lower, upper)
    raise ValueError(f"unknown ESS kind: {kind!r}")


def summarize(chains: np.ndarray) -> dict:
    """Posterior summary for one parameter: moments, quantiles, diagnostics."""
    flat = np.asarray(chains, dtype=float).ravel()
    return {
        "mean": float(flat.mean()),
        "median": float(np.median(flat)),
        "sd": float(flat.std(ddof=1)),
        "q2.5": float(np.quantile(flat, 0.025)),
        "q97.5": float(np.quantile(flat, 0.975)),
        "rhat": split_rhat(chains),
        "ess_bulk": ess(chains, "bulk"),
        "ess_tail": ess(chains, "tail"),
    }
