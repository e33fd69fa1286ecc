"""Bayesian hierarchical temporal sparse regression for stillbirth rates.

The package covers the full estimation workflow: data ingestion and
screening, definitional adjustment, observation-level variances, a
self-contained no-U-turn sampler with JAX gradients, convergence
diagnostics, out-of-sample validation, and a stage-based pipeline with a
small CLI.
"""

__version__ = "0.1.0"

from .data import (  # noqa: F401
    CountryIndex,
    Definition,
    IncomeGroup,
    Observation,
    SourceType,
)
from .diagnostics import ess, split_rhat, summarize  # noqa: F401
from .model import (  # noqa: F401
    ModelSpec,
    PriorConfig,
    SbrFit,
    fit_sbr_model,
    log_posterior,
    make_subsetted_spec,
    subset_covariates,
)
from .pipeline import PipelineConfig, run_pipeline  # noqa: F401
from .sampler import PosteriorDraws, SamplerConfig, SamplingError, sample  # noqa: F401
from .splines import build_basis, smoother_value  # noqa: F401
from .validation import (  # noqa: F401
    HoldoutMode,
    LooResult,
    elpd_compare,
    holdout_split,
    psis_loo,
)
