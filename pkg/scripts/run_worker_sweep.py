#!/usr/bin/env python3
"""Reproduce the worker-count comparison: one convergence curve per worker
count plus the parameter-averaging baseline, as CSVs ready for plotting.

Usage: python scripts/run_worker_sweep.py [out_dir] [--workers 1,2,4,8]
"""

import sys
from pathlib import Path

from distnewton.cli import main as cli_main

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "mnist_tanh.cfg"


def main(argv):
    out = argv[1] if len(argv) > 1 and not argv[1].startswith("-") else "out/sweep"
    extra = argv[2:] if len(argv) > 1 and not argv[1].startswith("-") else argv[1:]
    code = cli_main(["sweep", "--config", str(CONFIG), "--out", out, *extra])
    print(f"curves written to {out}/  (exit {code})")
    return code


if __name__ == "__main__":
    sys.exit(main(sys.argv))
