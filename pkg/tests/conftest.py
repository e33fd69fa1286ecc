"""Shared fixtures: one small end-to-end pipeline run reused across tests.

The pipeline is executed through the installed CLI so the tests exercise the
same entry point users run; the two identical runs also back the
byte-reproducibility check.
"""

import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from sbrest import synthetic


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("fixture")
    paths = synthetic.write_fixture(base / "inputs", seed=7)
    cfg = {
        "inputs": {k: f"inputs/{p.name}" for k, p in paths.items()},
        "output_dir": "out",
        "seed": 11,
        "window": [2000, 2019],
        "screen": {"threshold": 0.05},
        "model": {"prior": "horseshoe", "subset_cutoff": 0.025},
        "sampler": {"n_chains": 2, "n_iter": 500, "n_warmup": 250},
        "adjust_sampler": {"n_chains": 2, "n_iter": 500, "n_warmup": 250},
        "validation": {"enabled": True, "replicates": 1},
    }
    (base / "config.yaml").write_text(yaml.safe_dump(cfg))
    return base


def run_cli(args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "sbrest.cli", *args],
        cwd=cwd, capture_output=True, text=True,
    )


@pytest.fixture(scope="session")
def pipeline_runs(fixture_dir):
    """Two complete CLI runs with identical config and seed."""
    outs = []
    for name in ("run1", "run2"):
        result = run_cli(
            ["all", "--config", "config.yaml", "--out", name], cwd=fixture_dir)
        assert result.returncode == 0, result.stderr
        outs.append(fixture_dir / name)
    return outs


@pytest.fixture(scope="session")
def pipeline_out(pipeline_runs) -> Path:
    return pipeline_runs[0]
