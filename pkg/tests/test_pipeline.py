import csv
import json

import numpy as np
import pytest
import yaml

from sbrest.model import PriorConfig
from sbrest.pipeline import (
    Pipeline,
    PipelineConfig,
    PipelineError,
    covariate_only_draws,
    covariate_only_estimate,
    estimate_tables,
    pointwise_loglik,
    theta_draws,
)
from sbrest.splines import build_basis
from sbrest.synthetic import make_dataset

from conftest import run_cli


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_all_artifacts_and_manifests_present(pipeline_out):
    for name in ("estimates.csv", "adjustment_table.csv", "exclusions.csv",
                 "validation_report.csv", "loo_report.csv", "summary.csv"):
        assert (pipeline_out / name).exists(), name
    for stage in ("ingest", "adjust", "screen", "fit", "estimate", "validate", "plot"):
        manifest = json.loads((pipeline_out / "manifests" / f"{stage}.json").read_text())
        assert manifest["stage"] == stage
        assert manifest["seed"] == 11
        assert manifest["inputs"] and manifest["outputs"]
    assert (pipeline_out / "plots" / "index.html").exists()
    svgs = list((pipeline_out / "plots").glob("C*.svg"))
    assert len(svgs) == 8


def test_estimate_table_invariants(pipeline_out):
    rows = read_csv(pipeline_out / "estimates.csv")
    assert len(rows) == 8 * 20
    for r in rows:
        q5, med, q95 = float(r["q5"]), float(r["median"]), float(r["q95"])
        assert 0 < q5 <= med <= q95
        c5, cmed, c95 = float(r["cov_q5"]), float(r["cov_median"]), float(r["cov_q95"])
        assert 0 < c5 <= cmed <= c95


def test_estimates_track_truth(pipeline_out, fixture_dir):
    ds = make_dataset(seed=7)
    rows = read_csv(pipeline_out / "estimates.csv")
    medians = np.array([float(r["median"]) for r in rows]).reshape(8, 20)
    truth = np.exp(ds.truth.theta)
    # median absolute relative error across all country-years is modest
    rel = np.abs(medians - truth) / truth
    assert np.median(rel) < 0.15


def test_exclusions_cover_every_observation(pipeline_out, fixture_dir):
    excl = read_csv(pipeline_out / "exclusions.csv")
    clean = read_csv(pipeline_out / "artifacts" / "observations_clean.csv")
    assert {r["id"] for r in excl} == {r["id"] for r in clean}
    assert set(r["decision"] for r in excl) <= {"keep", "exclude", "cannot_screen"}
    for r in excl:
        if r["decision"] == "exclude":
            assert float(r["p"]) < 0.05
        elif r["decision"] == "keep":
            assert float(r["p"]) >= 0.05


def test_adjustment_table_covers_fixture_definitions(pipeline_out):
    rows = read_csv(pipeline_out / "adjustment_table.csv")
    keys = {(r["definition"], r["income_group"]) for r in rows}
    assert ("Ge22Weeks", "High") in keys
    for r in rows:
        assert float(r["phi"]) >= 0
    # containing definitions shift rates upward on the reference scale
    by_key = {(r["definition"], r["income_group"]): float(r["gamma"]) for r in rows}
    assert by_key[("Ge22Weeks", "High")] > 0


def test_summary_has_diagnostics(pipeline_out):
    rows = read_csv(pipeline_out / "summary.csv")
    names = [r["parameter"] for r in rows]
    assert "xi_w" in names and "psi4" in names and "sigma_j[Survey]" in names
    for r in rows:
        assert float(r["q2.5"]) <= float(r["median"]) <= float(r["q97.5"])


def test_validation_report_shape(pipeline_out):
    rows = read_csv(pipeline_out / "validation_report.csv")
    assert {r["exercise"] for r in rows} == {"Random20", "LastPerCountry"}
    for r in rows:
        for col in ("below_5", "below_10", "above_90", "above_95"):
            assert 0 <= float(r[col]) <= 100


def test_loo_report_is_pointwise(pipeline_out):
    rows = read_csv(pipeline_out / "loo_report.csv")
    screened = read_csv(pipeline_out / "artifacts" / "observations_screened.csv")
    assert len(rows) == len(screened)
    for r in rows:
        assert float(r["elpd_i"]) < 5.0


def test_rerun_skips_up_to_date_stages(pipeline_out, fixture_dir):
    before = (pipeline_out / "estimates.csv").read_bytes()
    mtime = (pipeline_out / "estimates.csv").stat().st_mtime_ns
    result = run_cli(["all", "--config", "config.yaml", "--out", pipeline_out.name],
                     cwd=fixture_dir)
    assert result.returncode == 0, result.stderr
    assert (pipeline_out / "estimates.csv").stat().st_mtime_ns == mtime
    assert (pipeline_out / "estimates.csv").read_bytes() == before


def test_missing_input_file_fails_at_ingest(tmp_path):
    cfg = PipelineConfig(inputs={
        "observations": str(tmp_path / "missing.csv"),
        "covariates": str(tmp_path / "missing.csv"),
        "regions": str(tmp_path / "missing.csv"),
        "income_groups": str(tmp_path / "missing.csv"),
        "hq_ratios": str(tmp_path / "missing.csv"),
        "paired_counts": str(tmp_path / "missing.csv"),
    }, output_dir=str(tmp_path / "out"))
    with pytest.raises(PipelineError, match="missing.csv"):
        Pipeline(cfg).run()


def test_config_requires_all_inputs():
    with pytest.raises(ValueError, match="input paths"):
        PipelineConfig(inputs={"observations": "x.csv"})


def test_config_yaml_roundtrip_and_overrides(tmp_path):
    raw = {
        "inputs": {k: f"{k}.csv" for k in PipelineConfig.REQUIRED_INPUTS},
        "seed": 3,
        "model": {"prior": "subsetted", "subset_cutoff": 0.05},
        "sampler": {"n_chains": 3, "n_iter": 100, "n_warmup": 50},
    }
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(raw))
    cfg = PipelineConfig.from_yaml(path)
    assert cfg.seed == 3 and cfg.prior.mode == "subsetted"
    assert cfg.sampler.n_chains == 3 and cfg.subset_cutoff == 0.05
    over = PipelineConfig.from_yaml(path, seed=9, output_dir=str(tmp_path / "o"))
    assert over.seed == 9 and over.output_dir.endswith("o")
    assert over.digest() != cfg.digest()  # seed participates in the digest


def test_unknown_stage_rejected(tmp_path):
    cfg = PipelineConfig(
        inputs={k: str(tmp_path / f"{k}.csv") for k in PipelineConfig.REQUIRED_INPUTS},
        output_dir=str(tmp_path / "out"))
    with pytest.raises(PipelineError, match="unknown stage"):
        Pipeline(cfg).run(stages=["polish"])


# -- draw-level helpers -----------------------------------------------------


def toy_params(spec, n_draws=50, seed=0, zero_alpha=False, zero_beta=False):
    rng = np.random.default_rng(seed)
    C, T, K, H = spec.n_countries, spec.n_years, spec.n_covariates, spec.basis.n_basis
    alpha = rng.normal(0, 0.05, (1, n_draws, C, H))
    if zero_alpha:
        alpha = np.zeros_like(alpha)
    beta = rng.normal(0, 0.1, (1, n_draws, K))
    if zero_beta:
        beta = np.zeros_like(beta)
    return {
        "beta": beta,
        "varsigma": rng.normal(2.5, 0.2, (1, n_draws, C)),
        "alpha": alpha,
        "psi": np.tile(np.array([0.0, 0, 0, -0.1]), (1, n_draws, 1)),
        "sigma_j": np.tile(np.array([0.02, 0.05, 0.2, 0.1]), (1, n_draws, 1)),
    }


@pytest.fixture(scope="module")
def toy_spec():
    return make_dataset(n_countries=3, n_obs=25, seed=5).spec


def test_covariate_only_equals_full_when_no_smoother(toy_spec):
    params = toy_params(toy_spec, zero_alpha=True)
    full, cov = estimate_tables(params, toy_spec)
    np.testing.assert_allclose(full, cov)


def test_covariate_only_is_intercept_when_beta_zero(toy_spec):
    params = toy_params(toy_spec, zero_beta=True)
    draws = covariate_only_draws(params, toy_spec)
    varsigma = params["varsigma"].reshape(-1, toy_spec.n_countries)
    np.testing.assert_allclose(draws, np.repeat(varsigma[:, :, None],
                                                toy_spec.n_years, axis=2))


def test_smoother_is_difference_of_surfaces(toy_spec):
    params = toy_params(toy_spec)
    diff = theta_draws(params, toy_spec) - covariate_only_draws(params, toy_spec)
    alpha = params["alpha"].reshape(-1, toy_spec.n_countries, toy_spec.basis.n_basis)
    expected = np.einsum("dch,th->dct", alpha, toy_spec.basis.basis_matrix)
    np.testing.assert_allclose(diff, expected, atol=1e-12)


def test_covariate_only_estimate_quantiles(toy_spec):
    params = toy_params(toy_spec)
    med, q5, q95 = covariate_only_estimate(params, toy_spec, 1, 4)
    assert 0 < q5 <= med <= q95


def test_pointwise_loglik_matches_direct_evaluation(toy_spec):
    params = toy_params(toy_spec)
    ll = pointwise_loglik(params, toy_spec)
    assert ll.shape == (50, toy_spec.n_obs)
    i = 7
    theta = theta_draws(params, toy_spec)[:, toy_spec.obs_country[i], toy_spec.obs_year[i]]
    psi = params["psi"].reshape(-1, 4)[:, toy_spec.obs_source[i]]
    var = (toy_spec.s2[i] + toy_spec.phi2[i]
           + params["sigma_j"].reshape(-1, 4)[:, toy_spec.obs_source[i]] ** 2)
    mu = theta + psi + toy_spec.gamma[i]
    expected = -0.5 * (np.log(2 * np.pi * var) + (toy_spec.log_y[i] - mu) ** 2 / var)
    np.testing.assert_allclose(ll[:, i], expected)
