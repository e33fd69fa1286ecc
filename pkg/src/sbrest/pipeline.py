"""Stage-by-stage orchestration from one config file to the output artifacts.

Stages run in a fixed order — ingest (including variance work), definitional
adjustment, ratio screening, model fitting (sparse fit, covariate subsetting,
refit), estimation, optional validation, plots — and every stage persists its
results to files plus a manifest with content hashes of its inputs, the root
seed, and the package version. A stage whose manifest still matches is
skipped on rerun, so any stage is resumable; the whole pipeline is a pure
function of (config, input files, seed).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .data import (
    Definition,
    IncomeGroup,
    SourceType,
    ingest_country_index,
    ingest_covariates,
    ingest_observations,
    standardize_covariates,
)
from .def_adjust import (
    AdjustmentTable,
    PairedCounts,
    PairKind,
    fit_containing,
    fit_overlapping,
    predictive_adjustment,
)
from .diagnostics import summarize
from .model import (
    HORSESHOE,
    ModelSpec,
    ParameterVector,
    PriorConfig,
    SUBSETTED,
    constrain_draws,
    fit_sbr_model,
    make_subsetted_spec,
    subset_covariates,
)
from .ratio_screen import apply_exclusion, fit_ratio_model
from .sampler import SamplerConfig
from .splines import build_basis
from .validation import (
    HoldoutMode,
    ValidationReport,
    holdout_split,
    interval_coverage,
    psis_loo,
)
from .variance import RatioVarianceInput, impute_max_error, mc_log_ratio_variance

STAGES = ("ingest", "adjust", "screen", "fit", "estimate", "validate", "plot")


class PipelineError(RuntimeError):
    """A stage failed; the message names the stage and the cause."""


@dataclass
class PipelineConfig:
    """Everything the pipeline needs, loadable from a single YAML file."""

    inputs: dict                      # name -> path for the six input CSVs
    output_dir: str = "out"
    seed: int = 0
    window: tuple = (2000, 2019)
    log_covariates: tuple = ()        # covariate names to log-transform
    screen_threshold: float = 0.05
    subset_cutoff: float = 0.025
    prior: PriorConfig = field(default_factory=PriorConfig)
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(
        n_chains=4, n_iter=1500, n_warmup=600))
    adjust_sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(
        n_chains=4, n_iter=1000, n_warmup=400))
    validation_enabled: bool = True
    validation_replicates: int = 1

    REQUIRED_INPUTS = (
        "observations", "covariates", "regions", "income_groups",
        "hq_ratios", "paired_counts",
    )

    def __post_init__(self):
        missing = [k for k in self.REQUIRED_INPUTS if k not in self.inputs]
        if missing:
            raise ValueError(f"config missing input paths: {missing}")
        if self.window[0] > self.window[1]:
            raise ValueError("estimation window is empty")

    def validate_paths(self):
        for name, path in self.inputs.items():
            if not Path(path).exists():
                raise PipelineError(f"ingest: input file {name!r} not found: {path}")

    @classmethod
    def from_yaml(cls, path, seed=None, output_dir=None):
        with open(path) as f:
            raw = yaml.safe_load(f) or {}
        base = Path(path).parent

        def sampler_from(key, default):
            d = raw.get(key, {})
            return SamplerConfig(
                n_chains=int(d.get("n_chains", default.n_chains)),
                n_iter=int(d.get("n_iter", default.n_iter)),
                n_warmup=int(d.get("n_warmup", default.n_warmup)),
                target_accept=float(d.get("target_accept", default.target_accept)),
                max_treedepth=int(d.get("max_treedepth", default.max_treedepth)),
            )

        model = raw.get("model", {})
        prior = PriorConfig(
            mode=model.get("prior", HORSESHOE),
            tau0=float(model.get("tau0", 1.0)),
            q=float(model.get("q", 2.0)),
            g=float(model.get("g", 8.0)),
            beta_sd=float(model.get("beta_sd", 5.0)),
        )
        validation = raw.get("validation", {})
        window = tuple(raw.get("window", (2000, 2019)))
        cfg = cls(
            inputs={k: str(base / v) for k, v in raw.get("inputs", {}).items()},
            output_dir=output_dir or str(base / raw.get("output_dir", "out")),
            seed=int(seed if seed is not None else raw.get("seed", 0)),
            window=window,
            log_covariates=tuple(raw.get("log_covariates", ())),
            screen_threshold=float(raw.get("screen", {}).get("threshold", 0.05)),
            subset_cutoff=float(model.get("subset_cutoff", 0.025)),
            prior=prior,
            sampler=sampler_from(
                "sampler", SamplerConfig(n_chains=4, n_iter=1500, n_warmup=600)),
            adjust_sampler=sampler_from(
                "adjust_sampler", SamplerConfig(n_chains=4, n_iter=1000, n_warmup=400)),
            validation_enabled=bool(validation.get("enabled", True)),
            validation_replicates=int(validation.get("replicates", 1)),
        )
        return cfg

    def digest(self) -> str:
        """Content hash of every configuration choice except the output dir."""
        payload = {
            "inputs": sorted(self.inputs.items()),
            "seed": self.seed,
            "window": list(self.window),
            "log_covariates": list(self.log_covariates),
            "screen_threshold": self.screen_threshold,
            "subset_cutoff": self.subset_cutoff,
            "prior": [self.prior.mode, self.prior.tau0, self.prior.q,
                      self.prior.g, self.prior.beta_sd],
            "sampler": _sampler_payload(self.sampler),
            "adjust_sampler": _sampler_payload(self.adjust_sampler),
            "validation": [self.validation_enabled, self.validation_replicates],
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _sampler_payload(s: SamplerConfig):
    return [s.n_chains, s.n_iter, s.n_warmup, s.target_accept, s.max_treedepth]


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(x: float) -> str:
    """Fixed-width float formatting so identical runs give identical bytes."""
    return f"{x:.6f}"


class Pipeline:
    """Runs the stages against one config; all state lives in the output dir."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.artifacts = self.out / "artifacts"
        self.manifests = self.out / "manifests"
        self.plots_dir = self.out / "plots"
        for d in (self.out, self.artifacts, self.manifests, self.plots_dir):
            d.mkdir(parents=True, exist_ok=True)

    # -- seeds ------------------------------------------------------------

    def stage_seed(self, stage: str, extra: int = 0) -> int:
        """Stage-specific seed derived from the root seed."""
        ss = np.random.SeedSequence((self.config.seed, STAGES.index(stage), extra))
        return int(ss.generate_state(1)[0])

    # -- manifests --------------------------------------------------------

    def _stage_inputs(self, stage: str) -> dict:
        cfg = self.config
        a = self.artifacts
        table = {
            "ingest": [cfg.inputs[k] for k in ("observations", "covariates",
                                               "regions", "income_groups")],
            "adjust": [cfg.inputs["paired_counts"], a / "observations_clean.csv"],
            "screen": [cfg.inputs["hq_ratios"], a / "observations_adjusted.csv"],
            "fit": [a / "observations_screened.csv", a / "covariates_std.npz",
                    cfg.inputs["regions"], cfg.inputs["income_groups"]],
            "estimate": [a / "fit_subsetted.npz"],
            "validate": [a / "fit_subsetted.npz", a / "observations_screened.csv"],
            "plot": [self.out / "estimates.csv", a / "observations_adjusted.csv"],
        }
        return {str(p): _sha256(p) for p in table[stage] if Path(p).exists()}

    def _manifest(self, stage: str, outputs) -> dict:
        return {
            "stage": stage,
            "version": __version__,
            "seed": self.config.seed,
            "config": self.config.digest(),
            "inputs": self._stage_inputs(stage),
            "outputs": [str(p) for p in outputs],
        }

    def _manifest_path(self, stage: str) -> Path:
        return self.manifests / f"{stage}.json"

    def _up_to_date(self, stage: str) -> bool:
        path = self._manifest_path(stage)
        if not path.exists():
            return False
        try:
            old = json.loads(path.read_text())
        except json.JSONDecodeError:
            return False
        if old.get("config") != self.config.digest() or old.get("seed") != self.config.seed:
            return False
        if old.get("inputs") != self._stage_inputs(stage):
            return False
        return all(Path(p).exists() for p in old.get("outputs", []))

    def _finish(self, stage: str, outputs):
        self._manifest_path(stage).write_text(
            json.dumps(self._manifest(stage, outputs), indent=2, sort_keys=True) + "\n"
        )

    # -- driver -----------------------------------------------------------

    def run(self, stages=None, force=False):
        """Run the requested stages (default: all) in pipeline order."""
        requested = list(STAGES) if stages is None else list(stages)
        unknown = [s for s in requested if s not in STAGES]
        if unknown:
            raise PipelineError(f"unknown stage(s): {unknown}")
        self.config.validate_paths()
        for stage in STAGES:
            if stage not in requested:
                continue
            if stage == "validate" and not self.config.validation_enabled:
                continue
            if not force and self._up_to_date(stage):
                continue
            try:
                outputs = getattr(self, f"_stage_{stage}")()
            except PipelineError:
                raise
            except Exception as e:
                raise PipelineError(f"{stage}: {e}") from e
            self._finish(stage, outputs)
        return self.out

    # -- stage: ingest ----------------------------------------------------

    def _stage_ingest(self):
        cfg = self.config
        observations, report = ingest_observations(
            cfg.inputs["observations"], window=cfg.window)
        rejections_path = self.out / "rejections.csv"
        report.write_csv(rejections_path)
        if not observations:
            raise PipelineError("ingest: no observation passed validation")

        index = ingest_country_index(cfg.inputs["regions"], cfg.inputs["income_groups"])
        years = list(range(cfg.window[0], cfg.window[1] + 1))
        names, raw = ingest_covariates(cfg.inputs["covariates"], index.countries, years)
        transform = {n: (n in cfg.log_covariates) for n in names}
        cov = standardize_covariates(raw, names, transform)
        cov_path = self.artifacts / "covariates_std.npz"
        np.savez(
            cov_path,
            names=np.array(cov.names),
            values=cov.values,
            raw_mean=cov.raw_mean,
            raw_sd=cov.raw_sd,
            log_transformed=np.array(cov.log_transformed),
        )

        unknown = sorted({o.country for o in observations} - set(index.countries))
        if unknown:
            raise PipelineError(f"ingest: observations for unindexed countries: {unknown}")

        observations = impute_max_error(observations)
        obs_path = self.artifacts / "observations_clean.csv"
        with open(obs_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "country", "year", "source_type", "definition",
                        "sbr", "log_se", "nmr", "v2"])
            for o in sorted(observations, key=lambda o: o.id):
                w.writerow([o.id, o.country, o.year, o.source_type.name,
                            o.definition.name, _fmt(o.sbr), _fmt(o.log_se),
                            "" if o.nmr is None else _fmt(o.nmr),
                            _fmt(self._ratio_variance(o))])
        return [rejections_path, cov_path, obs_path]

    def _ratio_variance(self, obs) -> float:
        """Monte Carlo error variance of the observation's log SBR:NMR ratio.

        Requires the underlying counts; observations carrying only rates get
        zero extra ratio variance.
        """
        if (obs.stillbirth_count is None or obs.total_births is None
                or obs.nmr is None or obs.live_births is None):
            return 0.0
        deaths = round(obs.stillbirth_count)
        neonatal = round(obs.nmr * obs.live_births / 1000.0)
        if deaths <= 0 or neonatal <= 0:
            return 0.0
        inp = RatioVarianceInput(
            stillbirth_count=int(deaths),
            total_births=int(round(obs.total_births)),
            neonatal_deaths=int(neonatal),
            live_births=int(round(obs.live_births)),
            n_samples=20_000,
            seed=self.stage_seed("ingest", extra=obs.id),
        )
        return mc_log_ratio_variance(inp).v2

    # -- stage: adjust ----------------------------------------------------

    def _stage_adjust(self):
        cfg = self.config
        groups = self._read_paired_counts(cfg.inputs["paired_counts"])
        table = AdjustmentTable()
        for i, ((definition, income), pairs) in enumerate(sorted(
                groups.items(), key=lambda kv: (kv[0][0].name, kv[0][1].name))):
            sampler = SamplerConfig(
                n_chains=cfg.adjust_sampler.n_chains,
                n_iter=cfg.adjust_sampler.n_iter,
                n_warmup=cfg.adjust_sampler.n_warmup,
                target_accept=cfg.adjust_sampler.target_accept,
                max_treedepth=cfg.adjust_sampler.max_treedepth,
                seed=self.stage_seed("adjust", extra=i),
            )
            if pairs[0].kind is PairKind.Containing:
                posterior = fit_containing(pairs, sampler)
            else:
                posterior = fit_overlapping(pairs, sampler)
            gamma, phi2, kappa = predictive_adjustment(
                posterior, seed=self.stage_seed("adjust", extra=1000 + i))
            table.add(definition, income, gamma, phi2, kappa)

        table_path = self.out / "adjustment_table.csv"
        table.write_csv(table_path)

        index = ingest_country_index(cfg.inputs["regions"], cfg.inputs["income_groups"])
        adj_path = self.artifacts / "observations_adjusted.csv"
        with open(self.artifacts / "observations_clean.csv", newline="") as src, \
                open(adj_path, "w", newline="") as dst:
            reader = csv.DictReader(src)
            w = csv.writer(dst)
            w.writerow(reader.fieldnames + ["gamma", "phi2"])
            for row in reader:
                gamma, phi2 = table.lookup(
                    Definition[row["definition"]],
                    index.income_group_of[row["country"]],
                )
                w.writerow(list(row.values()) + [_fmt(gamma), _fmt(phi2)])
        return [table_path, adj_path]

    @staticmethod
    def _read_paired_counts(path):
        groups = {}
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                kind = PairKind(row["kind"])
                opt = lambda k: float(row[k]) if row.get(k, "").strip() else None
                pair = PairedCounts(
                    z=float(row["z"]), z_alt=float(row["z_alt"]), kind=kind,
                    income_group=IncomeGroup(row["income_group"]),
                    a=opt("a"), b=opt("b"), c=opt("c"),
                )
                key = (Definition[row["definition"]], pair.income_group)
                groups.setdefault(key, []).append(pair)
        for key, pairs in groups.items():
            kinds = {p.kind for p in pairs}
            if len(kinds) > 1:
                raise PipelineError(f"adjust: mixed pair kinds for {key}")
        return groups

    # -- stage: screen ----------------------------------------------------

    def _stage_screen(self):
        cfg = self.config
        hq = []
        with open(cfg.inputs["hq_ratios"], newline="") as f:
            for row in csv.DictReader(f):
                hq.append((float(row["ratio"]), float(row["v2"])))
        sampler = SamplerConfig(
            n_chains=cfg.adjust_sampler.n_chains,
            n_iter=cfg.adjust_sampler.n_iter,
            n_warmup=cfg.adjust_sampler.n_warmup,
            seed=self.stage_seed("screen"),
        )
        fit = fit_ratio_model(hq, sampler)

        rows = []
        with open(self.artifacts / "observations_adjusted.csv", newline="") as f:
            rows = list(csv.DictReader(f))

        # screening uses the definition-adjusted rate
        result = apply_exclusion(
            rows, fit,
            nmr_source_policy=lambda r: float(r["nmr"]) if r["nmr"] else None,
            sbr_of=lambda r: float(r["sbr"]) * math.exp(float(r["gamma"])),
            v2_of=lambda r: float(r["v2"]),
            threshold=cfg.screen_threshold,
        )

        excl_path = self.out / "exclusions.csv"
        with open(excl_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "r", "v2", "p", "decision"])
            screened = (
                [(s, "keep") for s in result.kept]
                + [(s, "exclude") for s in result.excluded]
            )
            for s, decision in sorted(screened, key=lambda x: int(x[0].observation["id"])):
                w.writerow([s.observation["id"], _fmt(s.ratio), _fmt(s.v2),
                            _fmt(s.p), decision])
            for row in sorted(result.cannot_screen, key=lambda r: int(r["id"])):
                w.writerow([row["id"], "", "", "", "cannot_screen"])

        fit_path = self.artifacts / "ratio_model.json"
        fit_path.write_text(json.dumps({
            "mu_theta": fit.mu_theta,
            "mu_interval": list(fit.mu_interval),
            "sigma2_theta": fit.sigma2_theta,
            "boundary": fit.exclusion_boundary(cfg.screen_threshold),
        }, indent=2) + "\n")

        kept_path = self.artifacts / "observations_screened.csv"
        kept_rows = sorted(
            [s.observation for s in result.kept] + result.cannot_screen,
            key=lambda r: int(r["id"]),
        )
        with open(kept_path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(kept_rows)
        return [excl_path, fit_path, kept_path]

    # -- stage: fit -------------------------------------------------------

    def _load_model_inputs(self):
        cfg = self.config
        index = ingest_country_index(cfg.inputs["regions"], cfg.inputs["income_groups"])
        with np.load(self.artifacts / "covariates_std.npz") as z:
            names = tuple(str(n) for n in z["names"])
            X = z["values"]
        with open(self.artifacts / "observations_screened.csv", newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise PipelineError("fit: no observations survived screening")
        basis = build_basis(cfg.window[0], cfg.window[1])
        cidx = {c: i for i, c in enumerate(index.countries)}
        spec = ModelSpec(
            log_y=np.array([math.log(float(r["sbr"])) for r in rows]),
            obs_country=np.array([cidx[r["country"]] for r in rows]),
            obs_year=np.array([int(r["year"]) - cfg.window[0] for r in rows]),
            obs_source=np.array([SourceType[r["source_type"]].value for r in rows]),
            s2=np.array([float(r["log_se"]) ** 2 for r in rows]),
            gamma=np.array([float(r["gamma"]) for r in rows]),
            phi2=np.array([float(r["phi2"]) for r in rows]),
            X=X,
            covariate_names=names,
            region_of_country=index.region_idx_array(),
            n_regions=len(index.regions),
            basis=basis,
            prior=cfg.prior,
        )
        return spec, rows, index

    def _sampler(self, stage, extra=0) -> SamplerConfig:
        s = self.config.sampler
        return SamplerConfig(
            n_chains=s.n_chains, n_iter=s.n_iter, n_warmup=s.n_warmup,
            target_accept=s.target_accept, max_treedepth=s.max_treedepth,
            seed=self.stage_seed(stage, extra=extra),
        )

    def _stage_fit(self):
        cfg = self.config
        spec, _, _ = self._load_model_inputs()
        hs_fit = fit_sbr_model(spec, self._sampler("fit", extra=0))
        hs_path = self.artifacts / "fit_horseshoe.npz"
        np.savez(hs_path, draws=hs_fit.raw.draws)

        included = subset_covariates(hs_fit.pooled("beta"), cfg.subset_cutoff)
        subset_path = self.artifacts / "subset.json"
        subset_path.write_text(json.dumps({
            "included": included,
            "names": [spec.covariate_names[k] for k in included],
            "cutoff": cfg.subset_cutoff,
        }, indent=2) + "\n")

        sub_spec = make_subsetted_spec(spec, included)
        sub_fit = fit_sbr_model(sub_spec, self._sampler("fit", extra=1))
        sub_path = self.artifacts / "fit_subsetted.npz"
        np.savez(sub_path, draws=sub_fit.raw.draws)

        summary_path = self.out / "summary.csv"
        self._write_summary(summary_path, sub_fit, sub_spec)
        return [hs_path, subset_path, sub_path, summary_path]

    @staticmethod
    def _write_summary(path, fit, spec):
        rows = []

        def add(name, chains):
            s = summarize(np.asarray(chains))
            rows.append([name] + [
                _fmt(s[k]) if np.isfinite(s[k]) else "nan"
                for k in ("mean", "median", "sd", "q2.5", "q97.5",
                          "rhat", "ess_bulk", "ess_tail")
            ])

        for k, cov in enumerate(spec.covariate_names):
            add(f"beta[{cov}]", fit.params["beta"][:, :, k])
        add("xi_w", fit.params["xi_w"])
        add("sigma_eta", fit.params["sigma_eta"])
        add("sigma_varsigma", fit.params["sigma_varsigma"])
        add("sigma_delta", fit.params["sigma_delta"])
        add("psi4", fit.params["psi4"])
        for j, src in enumerate(SourceType):
            add(f"sigma_j[{src.name}]", fit.params["sigma_j"][:, :, j])
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["parameter", "mean", "median", "sd", "q2.5", "q97.5",
                        "rhat", "ess_bulk", "ess_tail"])
            w.writerows(rows)

    # -- stage: estimate --------------------------------------------------

    def _subsetted_spec_and_draws(self):
        spec, rows, index = self._load_model_inputs()
        with open(self.artifacts / "subset.json") as f:
            included = json.load(f)["included"]
        sub_spec = make_subsetted_spec(spec, included)
        with np.load(self.artifacts / "fit_subsetted.npz") as z:
            draws = z["draws"]
        return sub_spec, draws, rows, index

    def _stage_estimate(self):
        sub_spec, draws, _, index = self._subsetted_spec_and_draws()
        layout = ParameterVector(sub_spec)
        from .sampler import PosteriorDraws

        raw = PosteriorDraws(
            draws=draws,
            step_size=np.zeros(draws.shape[0]),
            tree_depth=np.zeros(draws.shape[:2], dtype=int),
            divergent=np.zeros(draws.shape[:2], dtype=bool),
            accept_prob=np.ones(draws.shape[:2]),
            logp=np.zeros(draws.shape[:2]),
            mass_inv=np.ones((draws.shape[0], draws.shape[2])),
        )
        params = constrain_draws(layout, raw)
        omega, cov_only = estimate_tables(params, sub_spec)

        years = np.arange(self.config.window[0], self.config.window[1] + 1)
        est_path = self.out / "estimates.csv"
        with open(est_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["country", "year", "median", "q5", "q95",
                        "cov_median", "cov_q5", "cov_q95"])
            for c, country in enumerate(index.countries):
                for t, year in enumerate(years):
                    q5, med, q95 = omega[:, c, t]
                    c5, cmed, c95 = cov_only[:, c, t]
                    if not (q5 <= med <= q95 and med > 0):
                        raise PipelineError(
                            f"estimate: quantile ordering violated for {country} {year}")
                    w.writerow([country, year, _fmt(med), _fmt(q5), _fmt(q95),
                                _fmt(cmed), _fmt(c5), _fmt(c95)])
        return [est_path]

    # -- stage: validate --------------------------------------------------

    def _stage_validate(self):
        cfg = self.config
        sub_spec, draws, rows, index = self._subsetted_spec_and_draws()

        reports = []
        for rep in range(cfg.validation_replicates):
            reports.append(self._holdout_exercise(
                sub_spec, rows, HoldoutMode.Random20, rep))
        reports.append(self._holdout_exercise(
            sub_spec, rows, HoldoutMode.LastPerCountry, 0))

        report_path = self.out / "validation_report.csv"
        with open(report_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(ValidationReport.HEADER)
            for r in reports:
                w.writerow(r.row())

        # PSIS-LOO on the full-data fit
        layout = ParameterVector(sub_spec)
        params = constrain_draws(layout, _raw_from(draws))
        loglik = pointwise_loglik(params, sub_spec)
        loo = psis_loo(loglik)
        loo_path = self.out / "loo_report.csv"
        with open(loo_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["id", "elpd_i", "pareto_k"])
            for row, e, k in zip(rows, loo.pointwise, loo.pareto_k):
                w.writerow([row["id"], _fmt(e), "nan" if np.isnan(k) else _fmt(k)])
        return [report_path, loo_path]

    def _holdout_exercise(self, sub_spec, rows, mode, replicate):
        import types

        keyed = [types.SimpleNamespace(
            id=int(r["id"]), country=r["country"], year=int(r["year"]), index=i)
            for i, r in enumerate(rows)]
        train, test = holdout_split(
            keyed, mode, replicate=replicate, seed=self.stage_seed("validate"))
        train_idx = np.array(sorted(o.index for o in train))
        test_idx = np.array(sorted(o.index for o in test))

        from dataclasses import replace as dreplace

        train_spec = dreplace(
            sub_spec,
            log_y=sub_spec.log_y[train_idx],
            obs_country=sub_spec.obs_country[train_idx],
            obs_year=sub_spec.obs_year[train_idx],
            obs_source=sub_spec.obs_source[train_idx],
            s2=sub_spec.s2[train_idx],
            gamma=sub_spec.gamma[train_idx],
            phi2=sub_spec.phi2[train_idx],
        )
        fit = fit_sbr_model(
            train_spec, self._sampler("validate", extra=100 * replicate +
                                      (1 if mode is HoldoutMode.LastPerCountry else 0)))
        pred = predictive_log_draws(
            fit.params, sub_spec, test_idx,
            seed=self.stage_seed("validate", extra=500 + replicate))
        name = "Random20" if mode is HoldoutMode.Random20 else "LastPerCountry"
        if mode is HoldoutMode.Random20 and self.config.validation_replicates > 1:
            name = f"Random20[{replicate}]"
        return interval_coverage(sub_spec.log_y[test_idx], pred, exercise=name)

    # -- stage: plot ------------------------------------------------------

    def _stage_plot(self):
        from . import plots

        with open(self.out / "estimates.csv", newline="") as f:
            est_rows = list(csv.DictReader(f))
        with open(self.artifacts / "observations_adjusted.csv", newline="") as f:
            obs_rows = list(csv.DictReader(f))

        by_country = {}
        for r in est_rows:
            by_country.setdefault(r["country"], []).append({
                "year": int(r["year"]),
                "median": float(r["median"]), "q5": float(r["q5"]),
                "q95": float(r["q95"]), "cov_median": float(r["cov_median"]),
                "cov_q5": float(r["cov_q5"]), "cov_q95": float(r["cov_q95"]),
            })
        obs_by_country = {}
        for r in obs_rows:
            sbr = float(r["sbr"])
            gamma = float(r["gamma"])
            total_sd = math.sqrt(float(r["log_se"]) ** 2 + float(r["phi2"]))
            adj = sbr * math.exp(gamma)
            obs_by_country.setdefault(r["country"], []).append({
                "id": int(r["id"]), "year": int(r["year"]), "sbr": sbr,
                "sbr_adjusted": adj,
                "lo": adj * math.exp(-1.96 * total_sd),
                "hi": adj * math.exp(1.96 * total_sd),
                "definition": r["definition"], "source_type": r["source_type"],
            })

        outputs = []
        for country in sorted(by_country):
            path = self.plots_dir / f"{country}.svg"
            plots.emit_country_plot(
                country, by_country[country], obs_by_country.get(country, []), path)
            outputs.append(path)
        extra = []
        loo_path = self.out / "loo_report.csv"
        if loo_path.exists():
            with open(loo_path, newline="") as f:
                loo_rows = [
                    {"id": int(r["id"]), "pareto_k": float(r["pareto_k"])}
                    for r in csv.DictReader(f) if r["pareto_k"] != "nan"
                ]
            if loo_rows:
                k_path = self.plots_dir / "pareto_k.svg"
                plots.emit_pareto_k_plot(loo_rows, k_path)
                outputs.append(k_path)
                extra.append("pareto_k.svg")
        outputs.append(plots.write_index(self.plots_dir, sorted(by_country), extra))
        return outputs


# ---------------------------------------------------------------------------
# draw-level helpers shared by the estimate and validate stages


def _raw_from(draws):
    from .sampler import PosteriorDraws

    return PosteriorDraws(
        draws=draws,
        step_size=np.zeros(draws.shape[0]),
        tree_depth=np.zeros(draws.shape[:2], dtype=int),
        divergent=np.zeros(draws.shape[:2], dtype=bool),
        accept_prob=np.ones(draws.shape[:2]),
        logp=np.zeros(draws.shape[:2]),
        mass_inv=np.ones((draws.shape[0], draws.shape[2])),
    )


def theta_draws(params: dict, spec: ModelSpec) -> np.ndarray:
    """(n_draws, C, T) pooled draws of the log rate surface."""
    beta = np.asarray(params["beta"]).reshape(-1, params["beta"].shape[-1])
    varsigma = np.asarray(params["varsigma"]).reshape(-1, spec.n_countries)
    alpha = np.asarray(params["alpha"]).reshape(-1, spec.n_countries,
                                                spec.basis.n_basis)
    Xb = np.einsum("dk,kct->dct", beta, spec.X)
    delta = np.einsum("dch,th->dct", alpha, spec.basis.basis_matrix)
    return varsigma[:, :, None] + Xb + delta


def covariate_only_draws(params: dict, spec: ModelSpec) -> np.ndarray:
    """(n_draws, C, T) log-rate draws without the temporal smoother."""
    beta = np.asarray(params["beta"]).reshape(-1, params["beta"].shape[-1])
    varsigma = np.asarray(params["varsigma"]).reshape(-1, spec.n_countries)
    Xb = np.einsum("dk,kct->dct", beta, spec.X)
    return varsigma[:, :, None] + Xb


def covariate_only_estimate(params: dict, spec: ModelSpec, country: int, year: int):
    """Median and 90% interval of exp(intercept + covariate effect)."""
    draws = np.exp(covariate_only_draws(params, spec)[:, country, year])
    q5, med, q95 = np.quantile(draws, [0.05, 0.5, 0.95])
    return float(med), float(q5), float(q95)


def estimate_tables(params: dict, spec: ModelSpec):
    """(3, C, T) arrays of the 5/50/95% rate quantiles, full and covariate-only."""
    omega = np.exp(theta_draws(params, spec))
    cov_only = np.exp(covariate_only_draws(params, spec))
    qs = [0.05, 0.5, 0.95]
    return np.quantile(omega, qs, axis=0), np.quantile(cov_only, qs, axis=0)


def pointwise_loglik(params: dict, spec: ModelSpec) -> np.ndarray:
    """(n_draws, n_obs) observation-level log likelihoods from pooled draws."""
    theta = theta_draws(params, spec)
    psi = np.asarray(params["psi"]).reshape(-1, 4)
    sigma_j = np.asarray(params["sigma_j"]).reshape(-1, 4)
    mu = (theta[:, spec.obs_country, spec.obs_year]
          + psi[:, spec.obs_source] + spec.gamma[None, :])
    var = spec.s2[None, :] + spec.phi2[None, :] + sigma_j[:, spec.obs_source] ** 2
    return -0.5 * (np.log(2 * np.pi * var) + (spec.log_y[None, :] - mu) ** 2 / var)


def predictive_log_draws(params: dict, spec: ModelSpec, test_idx, seed=0):
    """(n_draws, n_test) posterior-predictive draws of log y for held-out rows.

    Includes the source bias, definitional adjustment, and the full
    data-model noise (sampling + adjustment + source-type variance).
    """
    rng = np.random.default_rng(seed)
    theta = theta_draws(params, spec)
    psi = np.asarray(params["psi"]).reshape(-1, 4)
    sigma_j = np.asarray(params["sigma_j"]).reshape(-1, 4)
    test_idx = np.asarray(test_idx)
    mu = (theta[:, spec.obs_country[test_idx], spec.obs_year[test_idx]]
          + psi[:, spec.obs_source[test_idx]] + spec.gamma[test_idx][None, :])
    var = (spec.s2[test_idx][None, :] + spec.phi2[test_idx][None, :]
           + sigma_j[:, spec.obs_source[test_idx]] ** 2)
    return mu + np.sqrt(var) * rng.standard_normal(mu.shape)


def run_pipeline(config: PipelineConfig, stages=None, force=False) -> Path:
    """Run the pipeline; returns the artifact directory."""
    return Pipeline(config).run(stages=stages, force=force)
