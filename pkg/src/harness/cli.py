"""
Command-line interface for MPVIC Lab.
Parses flags, resolves the configuration, dispatches to the experiment
runners and writes the run manifest.
"""

import argparse
import logging
import os
import time
from typing import List, Optional

from src.control.explorer import ExplorationError
from src.data.loaders import ConfigError, resolve_config
from src.data.schema import RunManifest, VALID_LOG_LEVELS, VALID_MODES, VALID_TASKS
from src.harness import experiments
from src.harness.logs import configure_logging
from src.harness.manifest import config_hash, package_versions, relative_outputs, utc_now, write_manifest
from src.models.impedance_dynamics import PlantError
from src.models.penn import TrainingError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_ORACLE = 4

RUNNERS = {
    "explore": experiments.run_explore,
    "train": experiments.run_train,
    "eval": experiments.run_eval,
    "sweep": experiments.run_sweep,
    "oracle-check": experiments.run_oracle_check,
    "summarize": experiments.run_summarize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mpvic",
        description="Model predictive variable impedance control experiments.",
    )
    parser.add_argument("mode", choices=VALID_MODES)
    parser.add_argument("--config", default=None, help="YAML/JSON config (default config/app_config.yaml)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--task", choices=VALID_TASKS, default=None)
    parser.add_argument("--alpha-q", type=float, default=None, help="scale on the task's Q_base")
    parser.add_argument("--alpha-r", type=float, default=None, help="scale on the task's R_base")
    parser.add_argument("--trials", type=int, default=None, help="evaluation episodes")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--checkpoint", default=None, help="model checkpoint (.pt)")
    parser.add_argument("--steps", type=int, default=None,
                        help="explore: total transition budget; otherwise episode length")
    parser.add_argument("--dataset", default=None, help="transition dataset CSV")
    parser.add_argument("--workers", type=int, default=None, help="parallel episode processes")
    parser.add_argument("--oracle", action="store_true", default=None,
                        help="plan with the analytic plant model instead of a checkpoint")
    parser.add_argument("--log-level", choices=VALID_LOG_LEVELS, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "mode": args.mode, "seed": args.seed, "task": args.task, "trials": args.trials,
        "out": args.out, "checkpoint": args.checkpoint, "dataset": args.dataset,
        "workers": args.workers, "oracle": args.oracle, "log_level": args.log_level,
    }
    configure_logging(args.log_level or "INFO")
    try:
        config = resolve_config(args.config, overrides, args.alpha_q, args.alpha_r, args.steps)
    except ConfigError as exc:
        for error in exc.errors:
            logger.error("%s: %s", exc.source, error)
        return EXIT_CONFIG

    os.makedirs(config.output_dir, exist_ok=True)
    configure_logging(config.log_level, os.path.join(config.output_dir, "run.log"))
    logger.info("%s: task=%s seed=%d out=%s", config.mode, config.task, config.seed, config.output_dir)

    started = utc_now()
    t0 = time.perf_counter()
    status = EXIT_OK
    result = experiments.RunResult()
    try:
        result = RUNNERS[config.mode](config)
        if not result.passed:
            status = EXIT_ORACLE
    except (ConfigError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        status = EXIT_CONFIG
    except (PlantError, TrainingError, ExplorationError, RuntimeError, ValueError) as exc:
        logger.error("%s failed: %s", config.mode, exc)
        status = EXIT_RUNTIME
    for note in result.notes:
        logger.warning("%s", note)

    wall_times = dict(result.wall_times, total_s=time.perf_counter() - t0)
    manifest = RunManifest(
        mode=config.mode,
        task=config.task,
        seed=config.seed,
        config_hash=config_hash(config.raw),
        versions=package_versions(),
        wall_times=wall_times,
        outputs=relative_outputs(result.outputs, config.output_dir),
        started_at=started,
        finished_at=utc_now(),
        exit_status=status,
        notes=result.notes,
    )
    path = write_manifest(manifest, config.output_dir)
    logger.info("manifest written to %s (exit %d)", path, status)
    return status
