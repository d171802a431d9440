"""
probfm synth|train|evaluate|backtest|report|run-all|check [--config PATH] [--out DIR]
             [--seed N] [--methods m1,m2] [--symbols S1,S2]

Exit codes: 0 success, 2 some (symbol, method) cells failed or the decomposition
check missed its thresholds, 1 configuration error.
"""
import argparse
import json
import os
import sys
from dataclasses import replace
from typing import List, Optional

from src.exception import ConfigurationError, CustomException, DataValidationError
from src.logger import logging
from src.pipeline.report_pipeline import emit_report, load_report
from src.pipeline.synthetic_check import DecompositionCheckConfig, run_decomposition_check
from src.pipeline.train_pipeline import ExperimentConfig, ingest, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2

COMMAND_STAGES = {
    "train": ("train",),
    "evaluate": ("evaluate",),
    "backtest": ("backtest",),
    "run-all": ("train", "evaluate", "backtest"),
}


def _csv_list(value: str) -> List[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="probfm", description="Evidential and baseline return forecasting experiments")
    parser.add_argument("command", choices=["synth", "train", "evaluate", "backtest", "report", "run-all", "check"])
    parser.add_argument("--config", type=str, default=None, help="JSON experiment configuration")
    parser.add_argument("--out", type=str, default=None, help="output directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, default=None, help="random seed (overrides random_seed)")
    parser.add_argument("--methods", type=_csv_list, default=None, help="comma-separated method names")
    parser.add_argument("--symbols", type=_csv_list, default=None, help="comma-separated symbols")
    return parser


def load_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["random_seed"] = args.seed
    if args.methods is not None:
        overrides["methods"] = args.methods
    if args.symbols is not None:
        overrides["symbols"] = args.symbols
    return replace(cfg, **overrides).validate()


def run_command(command: str, cfg: ExperimentConfig) -> int:
    if command == "synth":
        _, path = ingest(cfg)
        print(path)
        return EXIT_OK

    if command == "check":
        check = run_decomposition_check(DecompositionCheckConfig(seed=cfg.random_seed))
        print(json.dumps(check.summary(), indent=2))
        return EXIT_OK if check.passed else EXIT_PARTIAL

    if command == "report":
        path = cfg.path("reports", "metrics.json")
        if not os.path.exists(path):
            raise ConfigurationError(f"{path} not found; run the backtest stage first")
        for written in emit_report(load_report(path), cfg.path("reports"), cfg.report_formats):
            print(written)
        return EXIT_OK

    result = run_experiment(cfg, COMMAND_STAGES[command], command=command)
    for cell in result.failed:
        print(f"FAILED {cell.symbol}/{cell.method} at {cell.stage}: {cell.error}", file=sys.stderr)
    for symbol, error in sorted(result.preprocessing_failures.items()):
        print(f"SKIPPED {symbol}: {error}", file=sys.stderr)
    return result.exit_code


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return run_command(args.command, cfg)
    except (ConfigurationError, DataValidationError) as e:
        logging.error("Configuration error: %s", e)
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CustomException as e:
        logging.error("probfm %s failed: %s", args.command, e)
        print(str(e), file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
