"""
Command-line interface: train, plan, bench and simulate subcommands.
Exit codes: 0 success, 1 run failure, 2 configuration or usage error.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from ..handler import process_job

logger = logging.getLogger(__name__)

SUBCOMMANDS = {
    "train": "train the feature encoder and composite operator; writes checkpoint and loss CSV",
    "plan": "run one closed-loop query on a scene; writes the trajectory CSV",
    "bench": "run a benchmark suite; writes metrics.csv, summary.csv and summary.json",
    "simulate": "ground-truth rollout of the arm and debris only",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dk_rrt", description="Koopman-predictive RRT toolkit")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="scene file (suite file for bench)")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--deterministic", action="store_true",
                       help="zero wall-clock columns so reruns are byte-identical")
    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code is None else int(e.code)

    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    result = process_job({"command": args.command, "config": args.config, "seed": args.seed,
                          "out": args.out, "deterministic": args.deterministic})
    if "error" in result:
        logger.error(f"--> {result['error']}")
        print(result["error"], file=sys.stderr)
    else:
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return result["exit_code"]
