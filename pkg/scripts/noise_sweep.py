"""Mean test RMSE of DGP on one benchmark across the noise grid.

Writes the plot-ready summary.csv of `dgp synth --noise-sweep` and prints
the rmse column per level.

    python scripts/noise_sweep.py --bench S1 --trials 10
"""

import argparse
import csv
import sys
from pathlib import Path

from dgp.cli import main as dgp

ROOT = Path(__file__).resolve().parents[1]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--bench", default="S1")
    p.add_argument("--method", default="dgp")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=str(ROOT / "configs" / "desk.toml"))
    p.add_argument("--out", default="runs/noise")
    args = p.parse_args()

    out = Path(args.out) / f"{args.bench}_{args.method}"
    rc = dgp(["--quiet", "synth", "--bench", args.bench, "--method", args.method, "--noise-sweep",
              "--trials", str(args.trials), "--seed", str(args.seed), "--config", args.config,
              "--out", str(out)])
    if rc:
        return rc
    print("noise\trmse_mean\trmse_std\trecovery%")
    for row in csv.DictReader(open(out / "summary.csv")):
        print(f"{row['noise']}\t{float(row['rmse_mean']):.4g}\t{float(row['rmse_std']):.3g}\t"
              f"{float(row['recovery_rate']):.0f}")
    print(f"summary written to {out / 'summary.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
