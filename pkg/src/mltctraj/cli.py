"""Command-line entry point: ``python -m mltctraj <subcommand> ...``.

Subcommands ``synth``, ``describe``, ``pairs``, ``trajectories``,
``network``, ``cluster`` and ``report`` each run one stage against the
artifacts already in ``--out``; ``run`` does everything in one go.
Exit status is 0 on success, 1 when a stage fails and 2 on bad usage.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

from .cohort import STRATUM_NAMES, load_cohort_dir
from .config import ConfigError, PipelineConfig
from .pipeline import (StageError, abandon_stage_outputs, read_catalog, resolve_strata, run_pipeline,
                       stage_cluster, stage_load, stage_network, stage_pairs,
                       stage_report, stage_stratify, stage_trajectories)
from .synth import generate_cohort, load_synth_spec

logger = logging.getLogger("mltctraj")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--input", type=Path, help="directory with the cohort CSV files")
    common.add_argument("--out", type=Path, required=True, help="artifact directory")
    common.add_argument("--stratum", default="all",
                        choices=STRATUM_NAMES + ("all",))
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--format", dest="fmt", default="csv", choices=("csv", "json"))
    common.add_argument("--log-level", default="INFO",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = argparse.ArgumentParser(prog="mltctraj", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    synth = sub.add_parser("synth", help="generate a synthetic cohort from a TOML spec")
    synth.add_argument("--spec", type=Path, required=True)
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--log-level", default="INFO",
                       choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    for name, text in (
            ("describe", "load, stratify and summarise the cohort"),
            ("pairs", "test condition pairs per stratum"),
            ("trajectories", "mine length-3 trajectories"),
            ("network", "build the condition network and similarity matrix"),
            ("cluster", "spectral clustering with CH-selected k"),
            ("report", "per-cluster summaries"),
            ("run", "all stages, all selected strata")):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _per_stratum(args, stage: str, fn: Callable[[str], object]) -> int:
    status = 0
    for stratum in resolve_strata(args.stratum):
        try:
            fn(stratum)
            logger.info("%s [%s] done", stage, stratum)
        except Exception as exc:  # noqa: BLE001 - one stratum must not stop the rest
            abandon_stage_outputs(args.out, stage, stratum)
            logger.error("%s", StageError(stage, stratum, exc))
            status = 1
    return status


def main(argv: Sequence[str] | None = None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.command in ("describe", "report", "run") and args.input is None:
        parser.error(f"{args.command} needs --input DIR")
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s")
    logger.setLevel(args.log_level)
    if args.command == "synth":
        try:
            paths = generate_cohort(load_synth_spec(args.spec), args.out)
        except (ValueError, OSError) as exc:
            logger.error("synth failed: %s", exc)
            return 1
        for p in paths.values():
            logger.info("wrote %s", p)
        return 0

    try:
        config = _config(args)
    except (ConfigError, OSError) as exc:
        logger.error("bad config: %s", exc)
        return 2
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "run":
            result = run_pipeline(config, args.input, out, args.stratum, args.fmt)
            for f in result.failures:
                logger.error("%s", f)
            return result.exit_status
        if args.command == "describe":
            cohort = load_cohort_dir(args.input, config)
            stage_load(cohort, out)
            stage_stratify(cohort, config, out)
            return 0
    except StageError as exc:
        logger.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.error("%s failed: %s", args.command, exc)
        return 1

    if args.command == "pairs":
        return _per_stratum(args, "pairs", lambda s: stage_pairs(config, out, s))
    if args.command == "trajectories":
        return _per_stratum(args, "trajectories",
                            lambda s: stage_trajectories(config, out, s))
    if args.command == "network":
        try:
            catalog = read_catalog(out)
        except Exception as exc:  # noqa: BLE001
            logger.error("network failed: %s", exc)
            return 1
        return _per_stratum(args, "network",
                            lambda s: stage_network(config, out, s, catalog))
    if args.command == "cluster":
        return _per_stratum(args, "cluster", lambda s: stage_cluster(config, out, s))
    if args.command == "report":
        try:
            cohort = load_cohort_dir(args.input, config)
        except Exception as exc:  # noqa: BLE001
            logger.error("report failed: %s", exc)
            return 1
        return _per_stratum(args, "report",
                            lambda s: stage_report(cohort, config, out, s, args.fmt))
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
