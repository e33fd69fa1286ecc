"""Synthetic data generated from the full model, for demos, tests, and fixtures.

The generator draws every latent quantity from the generative model itself
(hierarchical intercepts, RW1 spline coefficients with the sum-to-zero
constraint, source-type biases and error variances) so that fits against the
generated data can be checked for parameter recovery and calibration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import CountryIndex, Definition, IncomeGroup, Observation, SourceType
from .model import ModelSpec, PriorConfig
from .splines import build_basis

SOURCE_WEIGHTS = {
    SourceType.Administrative: 0.5,
    SourceType.HMIS: 0.2,
    SourceType.PopulationStudy: 0.15,
    SourceType.Survey: 0.15,
}

DEFAULT_SIGMA_J = (0.017, 0.045, 0.239, 0.135)  # admin, HMIS, pop study, survey
DEFAULT_PSI4 = -0.165


@dataclass
class Truth:
    beta: np.ndarray
    xi_w: float
    sigma_eta: float
    sigma_varsigma: float
    eta: np.ndarray
    varsigma: np.ndarray
    sigma_delta: float
    alpha: np.ndarray
    psi4: float
    sigma_j: np.ndarray
    theta: np.ndarray  # (C, T) true log SBR


@dataclass
class SyntheticDataset:
    spec: ModelSpec
    truth: Truth
    observations: list
    country_index: CountryIndex
    years: np.ndarray
    covariates_raw: np.ndarray  # (K, C, T) pre-standardization


def make_dataset(
    n_countries=8,
    n_regions=2,
    n_years=20,
    n_covariates=4,
    n_obs=120,
    seed=0,
    beta_true=None,
    sigma_delta=0.05,
    sigma_varsigma=0.3,
    sigma_eta=0.25,
    xi_w=2.5,
    psi4=DEFAULT_PSI4,
    sigma_j=DEFAULT_SIGMA_J,
    year_start=2000,
) -> SyntheticDataset:
    """Generate a dataset from the generative model with fixed true values."""
    rng = np.random.default_rng(seed)
    years = np.arange(year_start, year_start + n_years)
    basis = build_basis(year_start, year_start + n_years - 1)
    H = basis.n_basis

    countries = tuple(f"C{i:02d}" for i in range(n_countries))
    regions = [f"R{i % n_regions + 1}" for i in range(n_countries)]
    incomes = [
        IncomeGroup.High if i % 2 == 0 else IncomeGroup.LowMiddle
        for i in range(n_countries)
    ]
    index = CountryIndex(
        countries=countries,
        region_of=dict(zip(countries, regions)),
        income_group_of=dict(zip(countries, incomes)),
    )

    # covariate paths: mild country level and trend plus dominant cell-level
    # variation, so coefficients are identified within the estimation window
    raw = np.empty((n_covariates, n_countries, n_years))
    for k in range(n_covariates):
        level = rng.normal(0, 0.2, (n_countries, 1))
        trend = rng.normal(0, 0.01, (n_countries, 1)) * np.arange(n_years)
        raw[k] = 10.0 + level + trend + rng.normal(0, 1.0, (n_countries, n_years))
    flat = raw.reshape(n_covariates, -1)
    X = (raw - flat.mean(1)[:, None, None]) / flat.std(1, ddof=1)[:, None, None]

    if beta_true is None:
        beta_true = np.zeros(n_covariates)
        beta_true[0] = 0.4
        if n_covariates > 1:
            beta_true[1] = -0.1
    beta_true = np.asarray(beta_true, dtype=float)

    region_idx = index.region_idx_array()
    eta = xi_w + sigma_eta * rng.standard_normal(len(index.regions))
    varsigma = eta[region_idx] + sigma_varsigma * rng.standard_normal(n_countries)

    increments = sigma_delta * rng.standard_normal((n_countries, H - 1))
    walk = np.concatenate([np.zeros((n_countries, 1)), np.cumsum(increments, axis=1)], axis=1)
    alpha = walk - walk.mean(axis=1, keepdims=True)

    theta = (
        varsigma[:, None]
        + np.einsum("kct,k->ct", X, beta_true)
        + alpha @ basis.basis_matrix.T
    )

    sigma_j = np.asarray(sigma_j, dtype=float)
    psi = np.array([0.0, 0.0, 0.0, psi4])

    source_types = list(SOURCE_WEIGHTS)
    source_p = np.array(list(SOURCE_WEIGHTS.values()))
    observations = []
    obs_country = np.empty(n_obs, dtype=int)
    obs_year = np.empty(n_obs, dtype=int)
    obs_source = np.empty(n_obs, dtype=int)
    s2 = np.empty(n_obs)
    log_y = np.empty(n_obs)
    for i in range(n_obs):
        c = int(rng.integers(n_countries))
        t = int(rng.integers(n_years))
        j = int(rng.choice(len(source_types), p=source_p))
        omega_frac = np.exp(theta[c, t]) / 1000.0
        if j in (0, 1):  # count-based sources: Poisson delta-method variance
            births = float(rng.integers(20_000, 300_000))
            s2_i = 1.0 / (births * omega_frac)
        elif j == 2:
            births = float(rng.integers(2_000, 20_000))
            s2_i = rng.uniform(0.05, 0.15) ** 2
        else:
            births = float(rng.integers(2_000, 20_000))
            s2_i = rng.uniform(0.10, 0.25) ** 2
        total_var = s2_i + sigma_j[j] ** 2
        ly = theta[c, t] + psi[j] + rng.normal(0, np.sqrt(total_var))
        sbr = float(np.exp(ly))
        # observed SBR:NMR ratio drawn around the screening model's center
        ratio = float(np.exp(rng.normal(-0.18, np.sqrt(0.083))))
        nmr = sbr / ratio
        deaths = sbr / 1000.0 * births
        observations.append(
            Observation(
                id=i + 1,
                country=countries[c],
                year=int(years[t]),
                source_type=source_types[j],
                definition=Definition.Ge28Weeks,
                sbr=round(sbr, 3),
                total_births=births,
                stillbirth_count=round(deaths, 3),
                log_se=float(np.sqrt(s2_i)),
                nmr=round(nmr, 3),
                live_births=births - deaths,
            )
        )
        obs_country[i] = c
        obs_year[i] = t
        obs_source[i] = j
        s2[i] = s2_i
        log_y[i] = ly

    spec = ModelSpec(
        log_y=log_y,
        obs_country=obs_country,
        obs_year=obs_year,
        obs_source=obs_source,
        s2=s2,
        gamma=np.zeros(n_obs),
        phi2=np.zeros(n_obs),
        X=X,
        covariate_names=tuple(f"cov{k + 1}" for k in range(n_covariates)),
        region_of_country=region_idx,
        n_regions=len(index.regions),
        basis=basis,
        prior=PriorConfig(),
    )
    truth = Truth(
        beta=beta_true,
        xi_w=xi_w,
        sigma_eta=sigma_eta,
        sigma_varsigma=sigma_varsigma,
        eta=eta,
        varsigma=varsigma,
        sigma_delta=sigma_delta,
        alpha=alpha,
        psi4=psi4,
        sigma_j=sigma_j,
        theta=theta,
    )
    return SyntheticDataset(
        spec=spec,
        truth=truth,
        observations=observations,
        country_index=index,
        years=years,
        covariates_raw=raw,
    )


def make_hq_ratios(n=80, mu=-0.18, sigma2=0.083, v2=0.01, seed=0):
    """(ratio, v2) pairs from the screening model's normal hierarchy."""
    rng = np.random.default_rng(seed)
    theta = mu + np.sqrt(sigma2) * rng.standard_normal(n)
    log_r = theta + np.sqrt(v2) * rng.standard_normal(n)
    return [(float(np.exp(lr)), v2) for lr in log_r]


def make_containing_pairs(n=60, mu_logit=1.0, sigma=0.3, size_range=(200, 800), seed=0):
    """Paired counts from the containing-definition binomial hierarchy."""
    from .def_adjust import PairedCounts, PairKind

    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        omega = 1.0 / (1.0 + np.exp(-(mu_logit + sigma * rng.standard_normal())))
        z_alt = int(rng.integers(*size_range))
        z = int(rng.binomial(z_alt, omega))
        pairs.append(
            PairedCounts(
                z=z, z_alt=z_alt, kind=PairKind.Containing, income_group=IncomeGroup.High
            )
        )
    return pairs


def make_overlapping_pairs(n=60, mu_gamma=0.1, sigma=0.08, size_range=(300, 1000), seed=0):
    """Paired counts from the constrained multinomial overlap model.

    Gamma draws outside the support of the sum constraint (possible far in
    the positive tail) are redrawn.
    """
    from .def_adjust import PairedCounts, PairKind

    rng = np.random.default_rng(seed)
    pairs = []
    while len(pairs) < n:
        gamma = mu_gamma + sigma * rng.standard_normal()
        upper = np.exp(-max(gamma, 0.0))
        lower = max(1.0 / (1.0 + np.exp(gamma)), -np.expm1(-abs(gamma)))
        if upper - lower <= 1e-9:
            continue
        s = rng.uniform(lower, upper)
        eg = np.exp(gamma)
        omega_b = (s + eg - 1.0) / (1.0 + eg)
        probs = [1.0 - s, omega_b, s - omega_b]
        total = int(rng.integers(*size_range))
        a, b, c = rng.multinomial(total, probs)
        pairs.append(
            PairedCounts(
                z=int(a + c), z_alt=int(a + b), kind=PairKind.Overlapping,
                income_group=IncomeGroup.High, a=int(a), b=int(b), c=int(c),
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# pipeline fixture files


def write_fixture(directory, dataset: SyntheticDataset | None = None, seed=0,
                  n_alt_definition=8):
    """Write a complete set of pipeline input CSVs; returns their paths.

    A handful of observations are re-labeled with alternative definitions
    (their SBR shifted by the corresponding true adjustment) so the
    definitional-adjustment path is exercised end to end.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if dataset is None:
        dataset = make_dataset(seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence((seed, 99)))

    observations = [o for o in dataset.observations]
    # recast some high-income observations as 22-week-definition reports
    alt_ids = set()
    for obs in observations:
        if len(alt_ids) >= n_alt_definition:
            break
        if dataset.country_index.income_group_of[obs.country] is IncomeGroup.High:
            obs.definition = Definition.Ge22Weeks
            shift = float(np.exp(0.389 + 0.156 * rng.standard_normal()))
            obs.sbr = round(obs.sbr * shift, 3)
            obs.stillbirth_count = None  # counts no longer match the shifted rate
            alt_ids.add(obs.id)

    paths = {}
    paths["observations"] = directory / "observations.csv"
    with open(paths["observations"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["id", "country", "year", "source_type", "definition", "sbr",
             "total_births", "stillbirth_count", "log_se", "nmr", "live_births"]
        )
        for o in observations:
            w.writerow(
                [o.id, o.country, o.year, o.source_type.name, o.definition.name,
                 o.sbr,
                 "" if o.total_births is None else o.total_births,
                 "" if o.stillbirth_count is None else o.stillbirth_count,
                 "" if o.log_se is None else round(o.log_se, 6),
                 "" if o.nmr is None else o.nmr,
                 "" if o.live_births is None else round(o.live_births, 3)]
            )

    paths["covariates"] = directory / "covariates.csv"
    with open(paths["covariates"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["covariate", "country", "year", "value"])
        for k, name in enumerate(dataset.spec.covariate_names):
            for c, country in enumerate(dataset.country_index.countries):
                for t, year in enumerate(dataset.years):
                    w.writerow([name, country, year, round(dataset.covariates_raw[k, c, t], 6)])

    paths["regions"] = directory / "regions.csv"
    with open(paths["regions"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["country", "region"])
        for c in dataset.country_index.countries:
            w.writerow([c, dataset.country_index.region_of[c]])

    paths["income_groups"] = directory / "income_groups.csv"
    with open(paths["income_groups"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["country", "income_group"])
        for c in dataset.country_index.countries:
            w.writerow([c, dataset.country_index.income_group_of[c].name])

    paths["hq_ratios"] = directory / "hq_ratios.csv"
    with open(paths["hq_ratios"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["ratio", "v2"])
        for r, v2 in make_hq_ratios(seed=seed):
            w.writerow([round(r, 6), v2])

    paths["paired_counts"] = directory / "paired_counts.csv"
    with open(paths["paired_counts"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["definition", "income_group", "kind", "z", "z_alt", "a", "b", "c"])
        specs = [
            (Definition.Ge22Weeks, IncomeGroup.High, "containing", 0.75, 0.30),
            (Definition.Ge22Weeks, IncomeGroup.LowMiddle, "containing", 1.40, 0.25),
            (Definition.Ge24Weeks, IncomeGroup.LowMiddle, "containing", 1.39, 0.40),
            (Definition.Ge1000g, IncomeGroup.High, "overlapping", -0.065, 0.07),
            (Definition.Ge500g, IncomeGroup.High, "overlapping", 0.244, 0.087),
        ]
        for i, (definition, income, kind, mu, sig) in enumerate(specs):
            if kind == "containing":
                pairs = make_containing_pairs(n=40, mu_logit=mu, sigma=sig, seed=seed + i)
                for p in pairs:
                    w.writerow([definition.name, income.name, "Containing",
                                p.z, p.z_alt, "", "", ""])
            else:
                pairs = make_overlapping_pairs(n=40, mu_gamma=mu, sigma=sig, seed=seed + i)
                for p in pairs:
                    w.writerow([definition.name, income.name, "Overlapping",
                                p.z, p.z_alt, p.a, p.b, p.c])
    return paths
