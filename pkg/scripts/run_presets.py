#!/usr/bin/env python3
"""Run every experiment preset through the CLI and print each summary.

    python scripts/run_presets.py --output runs --seed 0
    python scripts/run_presets.py --only heterogeneity frequency
"""

from __future__ import annotations

import argparse
import sys
import time

from verfedsv.cli import main as cli_main
from verfedsv.experiments import PRESETS


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--output", default="runs")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="YAML overrides applied to every preset (e.g. dataset.path)")
    parser.add_argument("--only", nargs="+", choices=sorted(PRESETS), help="subset of presets")
    args = parser.parse_args()

    status = 0
    for name in args.only or sorted(PRESETS):
        print(f"== {name}", flush=True)
        start = time.perf_counter()
        argv = ["experiment", name, "--seed", str(args.seed), "--output", f"{args.output}/{name}"]
        if args.config:
            argv += ["--config", args.config]
        if name == "rank_report":
            argv = ["rank-report", *argv[2:]]
        code = cli_main(argv)
        print(f"-- {name}: exit {code} in {time.perf_counter() - start:.1f}s\n", flush=True)
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
