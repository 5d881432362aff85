#!/usr/bin/env python3
"""Run the finite-difference gradient check over every preset config."""

import sys
from pathlib import Path

from distnewton.cli import main as cli_main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main():
    worst = 0
    for cfg in sorted(CONFIGS.glob("*.cfg")):
        if "divergence" in cfg.name:
            continue
        print(f"== {cfg.name}")
        worst = max(worst, cli_main(["grad-check", "--config", str(cfg)]))
    return worst


if __name__ == "__main__":
    sys.exit(main())
