"""Self-contained No-U-Turn sampler with dual-averaging step size adaptation.

The implementation follows Algorithm 6 of Hoffman & Gelman (2014) (slice
variant with multiplicative tree doubling) extended with a diagonal mass
matrix adapted during warmup from sample variances in expanding windows.

The target is supplied as ``logp_fn(theta) -> (logp, grad)`` over an
unconstrained parameter vector; constrained-space transforms belong to the
model layer. Chains are run independently with per-chain RNGs derived from a
root seed, so results are reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DIVERGENCE_THRESHOLD = 1000.0


class SamplingError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    n_chains: int = 6
    n_iter: int = 6000
    n_warmup: int = 2000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must be in (0, 1)")
        if self.n_warmup >= self.n_iter:
            raise ValueError("n_warmup must be smaller than n_iter")


@dataclass
class PosteriorDraws:
    """Per-chain draws plus per-iteration sampler statistics.

    ``draws`` has shape (n_chains, n_kept, dim) and lives in the space of the
    target function handed to :func:`sample` (the model layer maps fitted
    draws back to constrained space before exposing them).
    """

    draws: np.ndarray
    step_size: np.ndarray        # (n_chains,) final adapted step size
    tree_depth: np.ndarray       # (n_chains, n_kept)
    divergent: np.ndarray        # (n_chains, n_kept) bool
    accept_prob: np.ndarray      # (n_chains, n_kept)
    logp: np.ndarray             # (n_chains, n_kept)
    mass_inv: np.ndarray = field(default=None)

    @property
    def n_divergent(self) -> int:
        return int(self.divergent.sum())

    @property
    def divergence_rate(self) -> float:
        return float(self.divergent.mean())

    def flat(self) -> np.ndarray:
        """Pooled draws, shape (n_chains * n_kept, dim)."""
        return self.draws.reshape(-1, self.draws.shape[-1])


def _leapfrog(theta, r, grad, eps, logp_fn, mass_inv):
    r = r + 0.5 * eps * grad
    theta = theta + eps * mass_inv * r
    logp, grad = logp_fn(theta)
    r = r + 0.5 * eps * grad
    return theta, r, grad, logp


def _kinetic(r, mass_inv):
    return 0.5 * float(np.dot(r, mass_inv * r))


def _find_reasonable_epsilon(theta, logp, grad, logp_fn, mass_inv, rng):
    eps = 1.0
    r = rng.standard_normal(len(theta)) / np.sqrt(mass_inv)
    _, r1, _, logp1 = _leapfrog(theta, r, grad, eps, logp_fn, mass_inv)
    joint0 = logp - _kinetic(r, mass_inv)
    joint1 = logp1 - _kinetic(r1, mass_inv)
    if not np.isfinite(joint1):
        joint1 = -np.inf
    a = 1.0 if joint1 - joint0 > np.log(0.5) else -1.0
    while a * (joint1 - joint0) > -a * np.log(2.0):
        eps *= 2.0**a
        if eps > 1e7 or eps < 1e-10:
            break
        _, r1, _, logp1 = _leapfrog(theta, r, grad, eps, logp_fn, mass_inv)
        joint1 = logp1 - _kinetic(r1, mass_inv)
        if not np.isfinite(joint1):
            joint1 = -np.inf
    return eps


class _Tree:
    """State threaded through the recursive doubling."""

    __slots__ = ("logp_fn", "mass_inv", "log_u", "joint0", "rng", "divergent")

    def __init__(self, logp_fn, mass_inv, log_u, joint0, rng):
        self.logp_fn = logp_fn
        self.mass_inv = mass_inv
        self.log_u = log_u
        self.joint0 = joint0
        self.rng = rng
        self.divergent = False

    def build(self, theta, r, grad, direction, depth, eps):
        if depth == 0:
            theta1, r1, grad1, logp1 = _leapfrog(
                theta, r, grad, direction * eps, self.logp_fn, self.mass_inv
            )
            joint = logp1 - _kinetic(r1, self.mass_inv)
            if not np.isfinite(joint):
                joint = -np.inf
            n1 = int(self.log_u <= joint)
            s1 = int(joint - self.log_u > -DIVERGENCE_THRESHOLD)
            if s1 == 0:
                self.divergent = True
            alpha = min(1.0, np.exp(min(joint - self.joint0, 0.0)))
            return theta1, r1, grad1, theta1, r1, grad1, theta1, grad1, logp1, n1, s1, alpha, 1

        (tm, rm, gm, tp, rp, gp, t1, g1, lp1, n1, s1, a1, na1) = self.build(
            theta, r, grad, direction, depth - 1, eps
        )
        if s1 == 1:
            if direction == -1:
                (tm, rm, gm, _, _, _, t2, g2, lp2, n2, s2, a2, na2) = self.build(
                    tm, rm, gm, direction, depth - 1, eps
                )
            else:
                (_, _, _, tp, rp, gp, t2, g2, lp2, n2, s2, a2, na2) = self.build(
                    tp, rp, gp, direction, depth - 1, eps
                )
            if n2 > 0 and self.rng.uniform() < n2 / max(n1 + n2, 1):
                t1, g1, lp1 = t2, g2, lp2
            span = tp - tm
            s1 = s2 * int(np.dot(span, self.mass_inv * rm) >= 0) * int(
                np.dot(span, self.mass_inv * rp) >= 0
            )
            n1 += n2
            a1 += a2
            na1 += na2
        return tm, rm, gm, tp, rp, gp, t1, g1, lp1, n1, s1, a1, na1


class _DualAveraging:
    def __init__(self, eps0, target, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0
        self.eps = eps0

    def update(self, accept_stat):
        self.m += 1
        frac = 1.0 / (self.m + self.t0)
        self.h_bar = (1 - frac) * self.h_bar + frac * (self.target - accept_stat)
        log_eps = self.mu - np.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m**-self.kappa
        self.log_eps_bar = (1 - w) * self.log_eps_bar + w * log_eps
        self.eps = float(np.exp(log_eps))

    @property
    def adapted(self):
        return float(np.exp(self.log_eps_bar))


def _warmup_windows(n_warmup):
    """(start, end) slow windows for mass adaptation, Stan-style buffers."""
    init_buf = max(1, int(0.15 * n_warmup))
    term_buf = max(1, int(0.10 * n_warmup))
    slow = n_warmup - init_buf - term_buf
    if slow < 20:
        return []
    windows = []
    start = init_buf
    size = max(10, slow // 7)
    while start < init_buf + slow:
        end = min(start + size, init_buf + slow)
        # absorb a too-small trailing window
        if (init_buf + slow) - end < size:
            end = init_buf + slow
        windows.append((start, end))
        start = end
        size *= 2
    return windows


def _run_chain(logp_fn, config, theta0, rng):
    dim = len(theta0)
    theta = np.array(theta0, dtype=float)
    logp, grad = logp_fn(theta)
    if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
        raise SamplingError("log posterior or gradient non-finite at initialization")

    mass_inv = np.ones(dim)
    eps0 = _find_reasonable_epsilon(theta, logp, grad, logp_fn, mass_inv, rng)
    da = _DualAveraging(eps0, config.target_accept)

    windows = _warmup_windows(config.n_warmup)
    window_samples = []
    n_kept = config.n_iter - config.n_warmup
    draws = np.empty((n_kept, dim))
    depth_out = np.zeros(n_kept, dtype=int)
    div_out = np.zeros(n_kept, dtype=bool)
    accept_out = np.zeros(n_kept)
    logp_out = np.zeros(n_kept)

    for m in range(config.n_iter):
        warming = m < config.n_warmup
        eps = da.eps if warming else da.adapted

        r0 = rng.standard_normal(dim) / np.sqrt(mass_inv)
        joint0 = logp - _kinetic(r0, mass_inv)
        log_u = joint0 + np.log(rng.uniform())
        tree = _Tree(logp_fn, mass_inv, log_u, joint0, rng)

        tm = tp = theta
        rm = rp = r0
        gm = gp = grad
        depth, n, s = 0, 1, 1
        alpha_sum, n_alpha = 0.0, 1
        while s == 1 and depth < config.max_treedepth:
            direction = -1 if rng.uniform() < 0.5 else 1
            if direction == -1:
                (tm, rm, gm, _, _, _, t1, g1, lp1, n1, s1, a1, na1) = tree.build(
                    tm, rm, gm, direction, depth, eps
                )
            else:
                (_, _, _, tp, rp, gp, t1, g1, lp1, n1, s1, a1, na1) = tree.build(
                    tp, rp, gp, direction, depth, eps
                )
            if s1 == 1 and rng.uniform() < min(1.0, n1 / n):
                theta, grad, logp = t1, g1, lp1
            n += n1
            span = tp - tm
            s = s1 * int(np.dot(span, mass_inv * rm) >= 0) * int(
                np.dot(span, mass_inv * rp) >= 0
            )
            depth += 1
            alpha_sum, n_alpha = a1, max(na1, 1)

        if warming:
            da.update(alpha_sum / n_alpha)
            for w_start, w_end in windows:
                if w_start <= m < w_end:
                    window_samples.append(theta.copy())
                    if m == w_end - 1:
                        # regularized variance estimate (Stan-style shrinkage)
                        samp = np.asarray(window_samples)
                        k = len(samp)
                        if k > 1:
                            var = samp.var(axis=0, ddof=1)
                            mass_inv = k / (k + 5.0) * var + 5.0 / (k + 5.0) * 1e-3
                        window_samples = []
                        eps0 = _find_reasonable_epsilon(
                            theta, logp, grad, logp_fn, mass_inv, rng
                        )
                        da = _DualAveraging(eps0, config.target_accept)
                    break
        else:
            i = m - config.n_warmup
            draws[i] = theta
            depth_out[i] = depth
            div_out[i] = tree.divergent
            accept_out[i] = alpha_sum / n_alpha
            logp_out[i] = logp

    return draws, da.adapted, depth_out, div_out, accept_out, logp_out, mass_inv


def sample(logp_fn, config: SamplerConfig, init=None, dim: int | None = None) -> PosteriorDraws:
    """Run NUTS chains against ``logp_fn(theta) -> (logp, grad)``.

    ``init`` may be a single vector (jittered per chain) or an array of
    per-chain starting points; if omitted, chains start at uniform(-2, 2)
    draws of dimension ``dim``.
    """
    root = np.random.SeedSequence(config.seed)
    chain_seeds = root.spawn(config.n_chains)

    results = []
    for c in range(config.n_chains):
        rng = np.random.default_rng(chain_seeds[c])
        if init is None:
            if dim is None:
                raise ValueError("dim is required when init is not given")
            theta0 = rng.uniform(-2, 2, dim)
        else:
            arr = np.asarray(init, dtype=float)
            if arr.ndim == 2:
                theta0 = arr[c]
            else:
                theta0 = arr if c == 0 else arr + rng.normal(0, 0.1, len(arr))
        results.append(_run_chain(logp_fn, config, theta0, rng))

    draws = PosteriorDraws(
        draws=np.stack([r[0] for r in results]),
        step_size=np.array([r[1] for r in results]),
        tree_depth=np.stack([r[2] for r in results]),
        divergent=np.stack([r[3] for r in results]),
        accept_prob=np.stack([r[4] for r in results]),
        logp=np.stack([r[5] for r in results]),
        mass_inv=np.stack([r[6] for r in results]),
    )
    if draws.divergence_rate > 0.25:
        raise SamplingError(
            f"{draws.n_divergent} divergent transitions "
            f"({100 * draws.divergence_rate:.1f}% of post-warmup draws); "
            f"step sizes {draws.step_size}, mean accept "
            f"{draws.accept_prob.mean():.3f}"
        )
    return draws
