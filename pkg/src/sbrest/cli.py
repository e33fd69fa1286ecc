"""Command-line entry point for the estimation pipeline.

Verbs map to pipeline stages; ``all`` runs every stage in order. The config
is a single YAML file; ``--seed`` and ``--out`` override its values and
``--stage`` narrows a verb to one named stage.
"""

from __future__ import annotations

import argparse
import sys

from .pipeline import STAGES, PipelineConfig, PipelineError, run_pipeline

# each verb runs a stage plus everything it needs that is not yet up to date
VERB_STAGES = {
    "fit": ("ingest", "adjust", "screen", "fit"),
    "adjust": ("ingest", "adjust"),
    "screen": ("ingest", "adjust", "screen"),
    "validate": ("ingest", "adjust", "screen", "fit", "validate"),
    "estimate": ("ingest", "adjust", "screen", "fit", "estimate"),
    "plot": ("ingest", "adjust", "screen", "fit", "estimate", "plot"),
    "all": STAGES,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbrest",
        description="Bayesian stillbirth-rate estimation pipeline",
    )
    parser.add_argument("verb", choices=sorted(VERB_STAGES))
    parser.add_argument("--config", required=True, help="YAML pipeline config")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--stage", choices=STAGES, default=None,
                        help="run only this stage (must already have inputs)")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--force", action="store_true",
                        help="rerun stages even when their manifests are current")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = PipelineConfig.from_yaml(args.config, seed=args.seed,
                                          output_dir=args.out)
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    stages = (args.stage,) if args.stage else VERB_STAGES[args.verb]
    try:
        out = run_pipeline(config, stages=stages, force=args.force)
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
