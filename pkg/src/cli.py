"""
Command-line entry point: python -m src.cli <command> [options]

Commands: train, import, evaluate, power, project, full, fetch. Every command writes its
reports into --out (default: $FLASHNET_DATA_DIR/runs/default).
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from config.experiment import ExperimentConfig
from config.settings import DEFAULT_CONFIG_PATH, LOG_LEVEL, RUNS_DIR
from src.core.service import COMMANDS, run_experiment

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flashnet", description="Floating-gate MLP simulator")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, default=DEFAULT_CONFIG_PATH, help="experiment config file")
    parser.add_argument("--out", type=Path, default=RUNS_DIR / "default", help="output directory")
    parser.add_argument("--seed", type=int, help="import/training seed")
    parser.add_argument("--noise-seed", type=int, help="read-noise seed")
    parser.add_argument("--workers", type=int, help="worker threads for evaluation")
    parser.add_argument("--accuracy", type=float, help="relative single-cell tuning accuracy")
    parser.add_argument("--tuned-fraction", type=float, help="fraction of cells tuned away from baseline")
    parser.add_argument("--order", help="tuning order: row-major, column-major or random")
    parser.add_argument("--noise", choices=("on", "off"), help="seeded read noise during evaluation")
    parser.add_argument("--threshold", type=float, help="binarization threshold in [0, 1]")
    parser.add_argument("--tech", help="tech profile name for `project`")
    parser.add_argument("--repeats", type=int, help="import+evaluate repeats for `full`")
    parser.add_argument("--mirror", help="MNIST mirror URL for `fetch`")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key; repeatable")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, object]:
    overrides = {
        "run.seed": args.seed,
        "run.noise_seed": args.noise_seed,
        "run.workers": args.workers,
        "run.repeats": args.repeats,
        "import.accuracy": args.accuracy,
        "import.tuned_fraction": args.tuned_fraction,
        "import.order": args.order,
        "noise.enabled": args.noise,
        "data.threshold": args.threshold,
        "perf.tech": args.tech,
    }
    for item in args.set:
        name, sep, value = item.partition("=")
        if not sep or "." not in name:
            raise ValueError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        overrides[name.strip()] = value.strip()
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=LOG_LEVEL,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    try:
        overrides = overrides_from_args(args)
    except ValueError as e:
        parser.error(str(e))

    try:
        config = ExperimentConfig.load(args.config, overrides)
        summary = run_experiment(config, args.command, args.out, tech=args.tech, mirror=args.mirror,
                                 repeats=args.repeats)
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"Error: Failed to run {args.command}: {e}", file=sys.stderr)
        return 1

    logger.info(f"{args.command} finished; reports in {args.out}")
    if args.command == "full":
        print(f"Software accuracy: {summary['software_accuracy']:.4f}")
        print(f"Imported fidelity: {summary['fidelity_mean']:.4f} ± {summary['fidelity_std']:.4f}")
        print(f"Energy per classification: {summary['energy_J']:.4e} J")
    return 0


if __name__ == "__main__":
    sys.exit(main())
