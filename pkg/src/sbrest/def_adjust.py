"""Definitional adjustment: mapping alternative stillbirth definitions to >=28 weeks.

Two paired-count models are fitted per (definition, income group):

* *containing* definitions (>=22 or >=24 weeks, whose stillbirths are a
  superset of the 28-week ones): a binomial model for the probability that a
  recorded stillbirth also meets the 28-week definition, with a logit-normal
  hierarchy across settings. The log adjustment is -log of that probability.
* *overlapping* definitions (birthweight cutoffs): a constrained multinomial
  model over the counts in both / alternative-only / 28-week-only cells. The
  log adjustment is the log-ratio of the definition-specific probabilities.

The predictive distribution for a new setting gives the adjustment gamma_d
(median) and extra variance phi_d^2 (variance) consumed by the data model.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field

import numpy as np

import jax
import jax.numpy as jnp

from .autodiff import logp_and_grad
from .data import Definition, IncomeGroup
from .sampler import SamplerConfig, sample


class PairKind(enum.Enum):
    Containing = "Containing"
    Overlapping = "Overlapping"


@dataclass(frozen=True)
class PairedCounts:
    """One paired stillbirth count from the same source, country, and year."""

    z: float                    # count under the >=28-week definition
    z_alt: float                # count under the alternative definition
    kind: PairKind
    income_group: IncomeGroup
    a: float | None = None      # overlapping only: in both definitions
    b: float | None = None      # overlapping only: alternative only
    c: float | None = None      # overlapping only: 28 weeks only

    def __post_init__(self):
        if self.kind is PairKind.Containing:
            if self.z > self.z_alt:
                raise ValueError(
                    f"containing definition requires z <= z_alt, got {self.z} > {self.z_alt}"
                )
        else:
            if self.a is None or self.b is None or self.c is None:
                raise ValueError("overlapping pairs need the a, b, c component counts")
            if min(self.a, self.b, self.c) < 0:
                raise ValueError("component counts must be non-negative")
            if self.a + self.b != self.z_alt or self.a + self.c != self.z:
                raise ValueError("component counts inconsistent with z, z_alt")

    @property
    def total(self):
        return self.a + self.b + self.c


@dataclass
class DefinitionPosterior:
    """Posterior draws from one paired-count fit."""

    kind: PairKind
    mu: np.ndarray        # pooled hyper-mean draws (logit scale or log-ratio scale)
    sigma: np.ndarray     # pooled hyper-sd draws
    unit: np.ndarray      # (n_draws, n_pairs) setting-level omega or Gamma draws
    omegas: np.ndarray | None = None  # overlapping: (n_draws, n_pairs, 3) simplex draws


def fit_containing(pairs, config: SamplerConfig | None = None) -> DefinitionPosterior:
    """Binomial logit-normal hierarchy for a containing definition."""
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least 2 paired observations")
    if any(p.kind is not PairKind.Containing for p in pairs):
        raise ValueError("all pairs must be of the containing kind")
    z = jnp.asarray([p.z for p in pairs], dtype=float)
    z_alt = jnp.asarray([p.z_alt for p in pairs], dtype=float)
    n = len(pairs)

    def log_density(u):
        mu, log_sigma = u[0], u[1]
        zstd = u[2:]
        sigma = jnp.exp(log_sigma)
        logit_omega = mu + sigma * zstd
        # expit(mu) ~ U(0,1)  <=>  mu ~ standard logistic
        lp = jax.nn.log_sigmoid(mu) + jax.nn.log_sigmoid(-mu)
        lp += -0.5 * sigma**2 + log_sigma
        lp += -0.5 * jnp.sum(zstd**2)
        lp += jnp.sum(
            z * jax.nn.log_sigmoid(logit_omega) + (z_alt - z) * jax.nn.log_sigmoid(-logit_omega)
        )
        return lp

    config = config or SamplerConfig(n_chains=4, n_iter=1500, n_warmup=500)
    draws = sample(logp_and_grad(log_density), config, dim=2 + n)
    flat = draws.flat()
    sigma = np.exp(flat[:, 1])
    omega = _expit(flat[:, 0:1] + sigma[:, None] * flat[:, 2:])
    return DefinitionPosterior(
        kind=PairKind.Containing, mu=flat[:, 0], sigma=sigma, unit=omega
    )


def _expit(x):
    return 1.0 / (1.0 + np.exp(-x))


def fit_overlapping(pairs, config: SamplerConfig | None = None,
                    mu_prior_var=20.0) -> DefinitionPosterior:
    """Constrained multinomial model for an overlapping definition.

    Per setting, the log-ratio Gamma of the definition-specific probabilities
    is normal across settings, and the sum of the single-definition cells
    gets a uniform prior on the interval stated for it; the interval is
    additionally intersected with the region where the implied cell
    probabilities are a valid simplex, so every retained draw satisfies the
    simplex constraint exactly.
    """
    pairs = list(pairs)
    if len(pairs) < 2:
        raise ValueError("need at least 2 paired observations")
    if any(p.kind is not PairKind.Overlapping for p in pairs):
        raise ValueError("all pairs must be of the overlapping kind")
    a = jnp.asarray([p.a for p in pairs], dtype=float)
    b = jnp.asarray([p.b for p in pairs], dtype=float)
    c = jnp.asarray([p.c for p in pairs], dtype=float)
    n = len(pairs)

    def cells(gamma, s):
        """Unique (omega_a, omega_b, omega_c) with the given log-ratio and sum."""
        eg = jnp.exp(gamma)
        omega_b = (s + eg - 1.0) / (1.0 + eg)
        return 1.0 - s, omega_b, s - omega_b

    def log_density(u):
        mu, log_sigma = u[0], u[1]
        zg = u[2 : 2 + n]
        v = u[2 + n :]
        sigma = jnp.exp(log_sigma)
        gamma = mu + sigma * zg

        upper = jnp.exp(-jax.nn.relu(gamma))          # 1 / max(1, e^Gamma)
        lower_stated = jax.nn.sigmoid(-gamma)         # 1 / (1 + e^Gamma)
        lower_valid = -jnp.expm1(-jnp.abs(gamma))     # 1 - e^-|Gamma|
        lower = jnp.maximum(lower_stated, lower_valid)
        width = upper - lower
        ok = jnp.all(width > 1e-12)

        sig_v = jax.nn.sigmoid(v)
        s = lower + width * sig_v
        omega_a, omega_b, omega_c = cells(gamma, s)

        lp = -0.5 * mu**2 / mu_prior_var
        lp += -0.5 * sigma**2 + log_sigma
        lp += -0.5 * jnp.sum(zg**2)
        # uniform prior over the stated interval, restricted to the valid part
        lp += -jnp.sum(jnp.log(upper - lower_stated))
        lp += jnp.sum(jnp.log(width) + jax.nn.log_sigmoid(v) + jax.nn.log_sigmoid(-v))
        lp += jnp.sum(
            a * jnp.log(omega_a) + b * jnp.log(omega_b) + c * jnp.log(omega_c)
        )
        return jnp.where(ok, lp, -jnp.inf)

    config = config or SamplerConfig(n_chains=4, n_iter=1500, n_warmup=500)
    # wide random starts can put some Gamma outside the simplex support;
    # start all chains near Gamma = 0 where the support is widest
    draws = sample(logp_and_grad(log_density), config, init=np.zeros(2 + 2 * n))
    flat = draws.flat()
    sigma = np.exp(flat[:, 1])
    gamma = flat[:, 0:1] + sigma[:, None] * flat[:, 2 : 2 + n]
    v = flat[:, 2 + n :]
    upper = np.exp(-np.maximum(gamma, 0.0))
    lower = np.maximum(_expit(-gamma), -np.expm1(-np.abs(gamma)))
    s = lower + (upper - lower) * _expit(v)
    eg = np.exp(gamma)
    omega_b = (s + eg - 1.0) / (1.0 + eg)
    omegas = np.stack([1.0 - s, omega_b, s - omega_b], axis=-1)
    return DefinitionPosterior(
        kind=PairKind.Overlapping, mu=flat[:, 0], sigma=sigma, unit=gamma, omegas=omegas
    )


def predictive_adjustment(posterior: DefinitionPosterior, n_draws=4000, seed=0):
    """Adjustment (gamma_d) and variance (phi_d^2) for a new setting.

    Hyperparameters are resampled from the posterior and one new setting-level
    effect is drawn per sample; the adjustment is the median of the implied
    log adjustment kappa and the variance its sample variance.
    Returns ``(gamma, phi2, kappa_draws)``.
    """
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(posterior.mu), n_draws)
    mu = posterior.mu[idx]
    sigma = posterior.sigma[idx]
    unit_new = mu + sigma * rng.standard_normal(n_draws)
    if posterior.kind is PairKind.Containing:
        kappa = np.logaddexp(0.0, -unit_new)  # -log(expit(logit_omega))
    else:
        kappa = unit_new
    return float(np.median(kappa)), float(kappa.var(ddof=1)), kappa


NO_ADJUSTMENT = (0.0, 0.0)


class Unadjustable(Exception):
    """No adjustment row or equivalence covers this definition/income pair."""


def apply_equivalences(definition: Definition, income_group: IncomeGroup):
    """Resolve an observation's definition to an adjustment-table key.

    Returns None when no adjustment is needed (the reference definition, or
    an equivalence that maps onto it), else the (definition, income group)
    row to look up. Surveys reporting seven-month pregnancies are already
    coded as the 28-week definition at ingestion.
    """
    if definition is Definition.Ge28Weeks:
        return None
    if income_group is IncomeGroup.LowMiddle:
        if definition is Definition.Ge1000g:
            return None  # assumed equivalent to >=28 weeks
        if definition is Definition.Ge500g:
            return (Definition.Ge22Weeks, IncomeGroup.LowMiddle)  # assumed equivalent
        return (definition, IncomeGroup.LowMiddle)
    return (definition, IncomeGroup.High)


@dataclass
class AdjustmentTable:
    """Per (definition, income group) adjustment and variance."""

    rows: dict = field(default_factory=dict)  # key -> (gamma, phi2)
    kappa_draws: dict = field(default_factory=dict)

    def add(self, definition, income_group, gamma, phi2, kappa=None):
        if phi2 < 0:
            raise ValueError("phi2 must be non-negative")
        self.rows[(definition, income_group)] = (float(gamma), float(phi2))
        if kappa is not None:
            self.kappa_draws[(definition, income_group)] = kappa

    def lookup(self, definition, income_group):
        """(gamma, phi2) for an observation, applying the equivalence rules."""
        key = apply_equivalences(definition, income_group)
        if key is None:
            return NO_ADJUSTMENT
        if key not in self.rows:
            raise Unadjustable(
                f"no adjustment row for definition {key[0].name}, "
                f"income group {key[1].name}"
            )
        return self.rows[key]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["definition", "income_group", "gamma", "phi"])
            for (d, g), (gamma, phi2) in sorted(
                self.rows.items(), key=lambda kv: (kv[0][0].name, kv[0][1].name)
            ):
                w.writerow([d.name, g.name, f"{gamma:.6f}", f"{np.sqrt(phi2):.6f}"])

    @classmethod
    def read_csv(cls, path):
        table = cls()
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                table.add(
                    Definition[row["definition"]],
                    IncomeGroup[row["income_group"]],
                    float(row["gamma"]),
                    float(row["phi"]) ** 2,
                )
        return table
