"""Joint log-posterior of the hierarchical temporal sparse regression model.

The model for the log stillbirth rate of country c in year t is

    Theta[c, t] = varsigma[c] + sum_k X[k, c, t] * beta[k] + delta[c, t]

with hierarchical country intercepts (country -> region -> global mean), a
quadratic B-spline smoother delta with a first-order random-walk penalty and
an exact per-country sum-to-zero constraint, and either regularized horseshoe
or vague normal priors on the regression coefficients. Observations enter
through

    log(y_i) ~ N(Theta[c_i, t_i] + psi[j_i] + gamma_i,  s2_i + phi2_i + sigma_j[j_i]^2)

where psi is the source-type bias (zero for all types except surveys, which
get a negative half-normal prior) and gamma_i/phi2_i are the pre-computed
definitional adjustment and its variance.

Densities and gradients are evaluated with JAX in float64; the sampler only
sees a flat unconstrained vector. All constrained/unconstrained transforms
(log scales with Jacobians, logit-scaled uniform, folded normal for the
survey bias) live here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402

from .sampler import PosteriorDraws, SamplerConfig, sample  # noqa: E402
from .splines import SplineBasis  # noqa: E402

N_SOURCE_TYPES = 4
SURVEY = 3  # index of the survey source type (the only biased one)

HORSESHOE = "horseshoe"
SUBSETTED = "subsetted"


@dataclass(frozen=True)
class PriorConfig:
    """Regression-coefficient prior: regularized horseshoe or vague normal."""

    mode: str = HORSESHOE
    tau0: float = 1.0
    q: float = 2.0       # inverse-gamma shape for the slab scale rho^2
    g: float = 8.0       # inverse-gamma scale for rho^2
    beta_sd: float = 5.0  # vague prior sd in subsetted mode

    def __post_init__(self):
        if self.mode not in (HORSESHOE, SUBSETTED):
            raise ValueError(f"unknown prior mode {self.mode!r}")
        if min(self.tau0, self.q, self.g, self.beta_sd) <= 0:
            raise ValueError("prior hyperparameters must be positive")


def tau0_from_sparsity_guess(p0: float, n_covariates: float, sigma: float, n_obs: float) -> float:
    """Global-shrinkage scale from a guess of the number of relevant covariates."""
    if not 0 < p0 < n_covariates:
        raise ValueError("p0 must lie strictly between 0 and the number of covariates")
    return p0 / (n_covariates - p0) * sigma / math.sqrt(n_obs)


@dataclass(frozen=True)
class ModelSpec:
    """Immutable bundle of everything the log posterior needs.

    Observation arrays are aligned by index; ``obs_year`` is the offset of the
    observation year into the estimation window.
    """

    log_y: np.ndarray        # (n,) log observed SBR per 1000
    obs_country: np.ndarray  # (n,) country index
    obs_year: np.ndarray     # (n,) year offset within the window
    obs_source: np.ndarray   # (n,) source type index, 0..3 (3 = survey)
    s2: np.ndarray           # (n,) sampling variance of log y
    gamma: np.ndarray        # (n,) definitional adjustment
    phi2: np.ndarray         # (n,) definitional adjustment variance
    X: np.ndarray            # (K, C, T) standardized covariates
    covariate_names: tuple
    region_of_country: np.ndarray  # (C,) region index
    n_regions: int
    basis: SplineBasis
    prior: PriorConfig = field(default_factory=PriorConfig)

    @property
    def n_obs(self):
        return len(self.log_y)

    @property
    def n_covariates(self):
        return self.X.shape[0]

    @property
    def n_countries(self):
        return self.X.shape[1]

    @property
    def n_years(self):
        return self.X.shape[2]

    def __post_init__(self):
        if self.X.shape[2] != self.basis.basis_matrix.shape[0]:
            raise ValueError("covariate years do not match the spline window")
        if self.n_obs and (self.obs_year.min() < 0 or self.obs_year.max() >= self.n_years):
            raise ValueError("observation outside the covariate window")


# ---------------------------------------------------------------------------
# parameter layout


class ParameterVector:
    """Named views onto the flat unconstrained sampling state.

    The layout depends on the model spec (numbers of covariates, countries,
    regions, basis functions and the prior mode). ``constrain`` maps a flat
    vector to the dictionary of constrained parameters; scale parameters are
    sampled on the log scale, sigma_delta through a scaled logit, and the
    survey bias as the negative fold of an unconstrained normal.
    """

    def __init__(self, spec: ModelSpec):
        K, C, R, H = (
            spec.n_covariates,
            spec.n_countries,
            spec.n_regions,
            spec.basis.n_basis,
        )
        self.spec = spec
        blocks = []
        if spec.prior.mode == HORSESHOE:
            blocks += [("z_beta", K), ("log_lambda", K), ("log_tau", 1), ("log_rho2", 1)]
        else:
            blocks += [("beta_raw", K)]
        blocks += [
            ("z_varsigma", C),
            ("z_eta", R),
            ("xi_w", 1),
            ("log_sigma_varsigma", 1),
            ("log_sigma_eta", 1),
            ("eps_alpha", C * (H - 1)),
            ("u_sigma_delta", 1),
            ("u_psi4", 1),
            ("log_sigma_j", N_SOURCE_TYPES),
        ]
        self.slices = {}
        start = 0
        for name, size in blocks:
            self.slices[name] = slice(start, start + size)
            start += size
        self.size = start

    def block(self, u, name):
        return u[self.slices[name]]

    def constrain(self, u):
        """Flat unconstrained vector -> dict of constrained parameters (jax)."""
        spec = self.spec
        C, R, H = spec.n_countries, spec.n_regions, spec.basis.n_basis
        b = lambda name: self.block(u, name)

        out = {}
        if spec.prior.mode == HORSESHOE:
            lam = jnp.exp(b("log_lambda"))
            tau = jnp.exp(b("log_tau")[0])
            rho2 = jnp.exp(b("log_rho2")[0])
            lam_tilde2 = rho2 * lam**2 / (rho2 + tau**2 * lam**2)
            beta = b("z_beta") * tau * jnp.sqrt(lam_tilde2)
            out.update(lambda_=lam, tau=tau, rho2=rho2, lambda_tilde2=lam_tilde2)
        else:
            beta = b("beta_raw")
        out["beta"] = beta

        sigma_varsigma = jnp.exp(b("log_sigma_varsigma")[0])
        sigma_eta = jnp.exp(b("log_sigma_eta")[0])
        xi_w = b("xi_w")[0]
        eta = xi_w + sigma_eta * b("z_eta")
        varsigma = eta[spec.region_of_country] + sigma_varsigma * b("z_varsigma")

        sigma_delta = 3.0 * jax.nn.sigmoid(b("u_sigma_delta")[0])
        eps = b("eps_alpha").reshape(C, H - 1)
        # random walk from non-centered increments, centered per country:
        # increments keep the N(0, sigma_delta^2) RW1 penalty exactly and the
        # per-country mean is zero by construction.
        walk = jnp.concatenate([jnp.zeros((C, 1)), jnp.cumsum(eps, axis=1)], axis=1)
        alpha = sigma_delta * (walk - walk.mean(axis=1, keepdims=True))

        psi4 = -jnp.abs(b("u_psi4")[0])
        psi = jnp.zeros(N_SOURCE_TYPES).at[SURVEY].set(psi4)
        sigma_j = jnp.exp(b("log_sigma_j"))

        out.update(
            varsigma=varsigma,
            eta=eta,
            xi_w=xi_w,
            sigma_varsigma=sigma_varsigma,
            sigma_eta=sigma_eta,
            alpha=alpha,
            sigma_delta=sigma_delta,
            psi4=psi4,
            psi=psi,
            sigma_j=sigma_j,
        )
        return out


# ---------------------------------------------------------------------------
# densities

_LOG_2PI = math.log(2.0 * math.pi)


def _norm_logpdf(x, mu, var):
    return -0.5 * (_LOG_2PI + jnp.log(var)) - 0.5 * (x - mu) ** 2 / var


def _half_cauchy_logpdf_exp(u, scale):
    """log density of x ~ C+(0, scale) with x = exp(u), Jacobian included."""
    x = jnp.exp(u)
    return jnp.log(2.0 / (jnp.pi * scale)) - jnp.log1p((x / scale) ** 2) + u


def _half_normal_logpdf_exp(u):
    """log density of x ~ N+(0, 1) with x = exp(u), Jacobian included."""
    x = jnp.exp(u)
    return jnp.log(2.0) - 0.5 * _LOG_2PI - 0.5 * x**2 + u


def _inv_gamma_logpdf_exp(u, q, g):
    """log density of x ~ Inv-Gamma(q, g) with x = exp(u), Jacobian included."""
    return q * jnp.log(g) - jax.scipy.special.gammaln(q) - (q + 1.0) * u - g * jnp.exp(-u) + u


def theta_matrix(params: dict, spec: ModelSpec):
    """(C, T) matrix of log SBR from constrained parameters."""
    Xb = jnp.einsum("kct,k->ct", spec.X, params["beta"])
    delta = params["alpha"] @ spec.basis.basis_matrix.T
    return params["varsigma"][:, None] + Xb + delta


def theta(params: dict, spec: ModelSpec, country: int, year_offset: int) -> float:
    """Log SBR Theta for one country-year from constrained parameters."""
    params = {k: jnp.asarray(v) for k, v in params.items()}
    return float(theta_matrix(params, spec)[country, year_offset])


def _log_posterior_impl(u, spec: ModelSpec, layout: ParameterVector):
    p = layout.constrain(u)
    prior = spec.prior
    lp = 0.0

    if prior.mode == HORSESHOE:
        lp += jnp.sum(_norm_logpdf(layout.block(u, "z_beta"), 0.0, 1.0))
        lp += jnp.sum(_half_cauchy_logpdf_exp(layout.block(u, "log_lambda"), 1.0))
        lp += _half_cauchy_logpdf_exp(layout.block(u, "log_tau")[0], prior.tau0)
        lp += _inv_gamma_logpdf_exp(layout.block(u, "log_rho2")[0], prior.q, prior.g)
    else:
        lp += jnp.sum(_norm_logpdf(p["beta"], 0.0, prior.beta_sd**2))

    # hierarchical intercepts (non-centered)
    lp += jnp.sum(_norm_logpdf(layout.block(u, "z_varsigma"), 0.0, 1.0))
    lp += jnp.sum(_norm_logpdf(layout.block(u, "z_eta"), 0.0, 1.0))
    lp += _norm_logpdf(p["xi_w"], 2.5, 2.0**2)
    lp += _half_normal_logpdf_exp(layout.block(u, "log_sigma_varsigma")[0])
    lp += _half_normal_logpdf_exp(layout.block(u, "log_sigma_eta")[0])

    # RW1 smoother increments (non-centered) and sigma_delta ~ U(0, 3)
    lp += jnp.sum(_norm_logpdf(layout.block(u, "eps_alpha"), 0.0, 1.0))
    u_sd = layout.block(u, "u_sigma_delta")[0]
    lp += jnp.log(1.0 / 3.0)
    lp += jnp.log(3.0) + jax.nn.log_sigmoid(u_sd) + jax.nn.log_sigmoid(-u_sd)

    # source-type bias and error sd
    lp += _norm_logpdf(layout.block(u, "u_psi4")[0], 0.0, 5.0**2)
    lp += jnp.sum(_half_normal_logpdf_exp(layout.block(u, "log_sigma_j")))

    # data model
    Theta = theta_matrix(p, spec)
    mu = Theta[spec.obs_country, spec.obs_year] + p["psi"][spec.obs_source] + spec.gamma
    var = spec.s2 + spec.phi2 + p["sigma_j"][spec.obs_source] ** 2
    lp += jnp.sum(_norm_logpdf(spec.log_y, mu, var))
    return lp


def make_logp_fn(spec: ModelSpec):
    """Compiled (value, gradient) callable over the flat unconstrained vector."""
    layout = ParameterVector(spec)
    jspec = replace(
        spec,
        log_y=jnp.asarray(spec.log_y),
        obs_country=jnp.asarray(spec.obs_country),
        obs_year=jnp.asarray(spec.obs_year),
        obs_source=jnp.asarray(spec.obs_source),
        s2=jnp.asarray(spec.s2),
        gamma=jnp.asarray(spec.gamma),
        phi2=jnp.asarray(spec.phi2),
        X=jnp.asarray(spec.X),
        region_of_country=jnp.asarray(spec.region_of_country),
    )
    vg = jax.jit(jax.value_and_grad(lambda u: _log_posterior_impl(u, jspec, layout)))

    def logp_fn(u):
        v, g = vg(u)
        v = v.item()
        if not math.isfinite(v):
            return -math.inf, np.zeros_like(u)
        return v, np.asarray(g)

    return logp_fn, layout


def log_posterior(u: np.ndarray, spec: ModelSpec):
    """Joint log density and gradient at one unconstrained point.

    Raises if the result is non-finite, naming the parameter blocks whose
    gradient entries are non-finite.
    """
    layout = ParameterVector(spec)
    value, grad = jax.value_and_grad(lambda x: _log_posterior_impl(x, spec, layout))(
        jnp.asarray(u)
    )
    value = float(value)
    grad = np.asarray(grad)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        bad = [
            name
            for name, sl in layout.slices.items()
            if not np.all(np.isfinite(grad[sl]))
        ]
        raise FloatingPointError(
            f"non-finite log posterior (value={value}) in blocks: {bad or ['likelihood']}"
        )
    return value, grad


# ---------------------------------------------------------------------------
# fitting and covariate subsetting


@dataclass
class SbrFit:
    """Constrained posterior draws of the full model plus raw sampler output."""

    spec: ModelSpec
    params: dict          # name -> array with leading dims (n_chains, n_kept, ...)
    raw: PosteriorDraws

    def pooled(self, name):
        arr = self.params[name]
        return arr.reshape((-1,) + arr.shape[2:])


def constrain_draws(layout: ParameterVector, draws: PosteriorDraws) -> dict:
    """Map raw unconstrained draws to constrained parameter arrays."""
    flat = draws.draws.reshape(-1, draws.draws.shape[-1])
    mapped = jax.vmap(layout.constrain)(jnp.asarray(flat))
    n_chains, n_kept, _ = draws.draws.shape
    out = {}
    for name, arr in mapped.items():
        arr = np.asarray(arr)
        out[name] = arr.reshape((n_chains, n_kept) + arr.shape[1:])
    return out


def fit_sbr_model(spec: ModelSpec, config: SamplerConfig) -> SbrFit:
    """Sample the joint posterior with NUTS."""
    logp_fn, layout = make_logp_fn(spec)
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 17)))
    init = rng.uniform(-1, 1, (config.n_chains, layout.size))
    raw = sample(logp_fn, config, init=init)
    return SbrFit(spec=spec, params=constrain_draws(layout, raw), raw=raw)


def subset_covariates(beta_draws: np.ndarray, cutoff: float) -> list:
    """Indices of covariates whose absolute posterior median exceeds the cutoff.

    ``beta_draws`` is any array whose last axis is the covariate axis.
    """
    medians = np.median(np.asarray(beta_draws).reshape(-1, beta_draws.shape[-1]), axis=0)
    included = [k for k, m in enumerate(medians) if abs(m) >= cutoff]
    if not included:
        raise ValueError(
            f"cutoff {cutoff} excludes every covariate "
            f"(largest |median| = {np.abs(medians).max():.4f}); lower the cutoff"
        )
    return included


def make_subsetted_spec(spec: ModelSpec, included: list) -> ModelSpec:
    """Restrict the covariate matrix and switch to vague coefficient priors."""
    if not included:
        raise ValueError("included covariate set must be non-empty")
    return replace(
        spec,
        X=spec.X[np.asarray(included)],
        covariate_names=tuple(spec.covariate_names[k] for k in included),
        prior=PriorConfig(
            mode=SUBSETTED,
            beta_sd=spec.prior.beta_sd,
            tau0=spec.prior.tau0,
            q=spec.prior.q,
            g=spec.prior.g,
        ),
    )
