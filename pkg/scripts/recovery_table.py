"""Recovery rates of DGP and plain GP on the synthetic benchmarks.

Runs `dgp synth` for every (benchmark, method) pair with the desk-scale
config and prints one row per pair.  Per-trial artifacts land under --out.

    python scripts/recovery_table.py --bench S1 S4 --trials 10
"""

import argparse
import csv
import sys
from pathlib import Path

from dgp.cli import main as dgp

ROOT = Path(__file__).resolve().parents[1]


def parse_args():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--bench", nargs="+", default=["S1", "S2", "S3", "S4", "S5", "S6"])
    p.add_argument("--methods", nargs="+", default=["dgp", "gp"])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=str(ROOT / "configs" / "desk.toml"))
    p.add_argument("--out", default="runs/recovery")
    return p.parse_args()


def main():
    args = parse_args()
    print("bench\tmethod\trecovery%\ttest_r2\tsize")
    for bench in args.bench:
        for method in args.methods:
            out = Path(args.out) / f"{bench}_{method}"
            rc = dgp(["--quiet", "synth", "--bench", bench, "--method", method,
                      "--trials", str(args.trials), "--seed", str(args.seed),
                      "--config", args.config, "--out", str(out)])
            if rc:
                return rc
            row = next(csv.DictReader(open(out / "summary.csv")))
            print(f"{bench}\t{method}\t{float(row['recovery_rate']):.0f}\t"
                  f"{float(row['r2_mean']):.4f}\t{float(row['size_mean']):.1f}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
