#!/usr/bin/env python3
"""End-to-end demo: synthesize an imbalanced dataset, run the whole pipeline
(split -> score -> build -> tune -> refine -> report), and print the final
tuned / vanilla / random / full comparison table.

    python scripts/run_demo.py --out runs/demo
"""

import argparse
import os
import subprocess
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(HERE, "..", "src"))

from coretune.cli import main as coretune_main  # noqa: E402


def run_command(command, config_path):
    print(f"== coretune {command}")
    code = coretune_main([command, "--config", config_path])
    if code not in (0, 3):
        raise SystemExit(f"{command} failed with exit code {code}")
    return code


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="runs/demo")
    parser.add_argument("--n", type=int, default=6000)
    args = parser.parse_args()

    subprocess.run([sys.executable, os.path.join(HERE, "generate_synthetic.py"),
                    "--out", args.out, "--n", str(args.n)], check=True)
    config_path = os.path.join(args.out, "config.json")
    for command in ("split", "score", "build", "tune", "refine", "report"):
        run_command(command, config_path)

    print("\nComparison (from comparison.csv):")
    with open(os.path.join(args.out, "comparison.csv")) as fh:
        for line in fh:
            if line.startswith("#"):
                continue
            cells = line.strip().split(",")
            if cells[0] == "method":
                print(f"{cells[0]:>8} {cells[1]:>12} {cells[2]:>18} "
                      f"{cells[3]:>8} {cells[4]:>8}")
            else:
                print(f"{cells[0]:>8} {cells[1]:>12} "
                      f"{float(cells[2]):>17.4f} {float(cells[3]):>8.4f} "
                      f"{float(cells[4]):>8.4f}")
    print(f"\nartifacts in {args.out}/")


if __name__ == "__main__":
    main()
