"""Run every config in ``configs/`` and write the reports to ``reports/``.

Usage: python3 scripts/run_all.py [--out-dir reports] [--threads 1]
"""

import argparse
import sys
import time
from pathlib import Path

from compfun.experiments import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default=str(ROOT / "reports"))
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    worst = 0
    for cfg in sorted((ROOT / "configs").glob("*.json")):
        t0 = time.time()
        rep = run_experiment(cfg, Path(args.out_dir) / cfg.stem, threads=args.threads)
        status = {0: "PASS", 1: "FAIL", 2: "BUDGET"}[rep.exit_code]
        print(f"{status} {cfg.name} ({time.time() - t0:.1f} s)")
        worst = max(worst, rep.exit_code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
