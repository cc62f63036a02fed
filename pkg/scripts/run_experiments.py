#!/usr/bin/env python3
"""Run every bundled experiment config through the CLI and print the
verdict tables.

Usage:  python scripts/run_experiments.py [--out DIR] [--threads N] [names...]

Without names, all configs in scripts/configs are run.  Results land under
DIR (default ./results), one subdirectory per experiment.
"""

import argparse
import json
import sys
from pathlib import Path

from riccdiff import cli

CONFIG_DIR = Path(__file__).parent / "configs"


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("names", nargs="*",
                        help="config stems to run (default: all)")
    parser.add_argument("--out", type=Path, default=Path("results"))
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args()

    configs = sorted(CONFIG_DIR.glob("*.json"))
    if args.names:
        configs = [c for c in configs if c.stem in args.names]
    if not configs:
        print("no matching configs", file=sys.stderr)
        return 2

    worst = 0
    for cfg_path in configs:
        experiment = json.loads(cfg_path.read_text())["experiment"]
        outdir = args.out / cfg_path.stem
        argv = [experiment, "--config", str(cfg_path), "--out", str(outdir)]
        if args.threads:
            argv += ["--threads", str(args.threads)]
        print(f"== {cfg_path.stem} ({experiment}) -> {outdir}")
        rc = cli.main(argv)
        cli.report(outdir)
        worst = max(worst, rc)
    return worst


if __name__ == "__main__":
    sys.exit(main())
