"""Command-line harness: ``dgp fit``, ``dgp synth`` and ``dgp eval``.

Exit codes are 0 on success, 1 on usage or validation errors and 2 when
the target has zero variance.  Progress goes to stderr unless ``--quiet``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .data import (NOISE_GRID, BENCHMARKS, NoiseSpec, SyntheticSpec, add_noise,
                   generate_synthetic, load_csv, split)
from .engine import run
from .errors import DatasetError, DegenerateTargetError
from .expr import (ExpressionParseError, TreeError, evaluate_batch, format_prefix, numeric_equiv,
                   parse_prefix, simplify, tree_size, validate)
from .grad import nrmse
from .metrics import (TrialRecord, aggregate, r2, rmse, summary_row, write_summary_csv,
                      write_trials_csv)

log = logging.getLogger("dgp")

# seed tags for the data-side streams; the engine uses its own
_SPLIT, _DATA, _NOISE = 100, 101, 102


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, (tuple, np.ndarray)):
        return list(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, default=_json_default)
        fh.write("\n")


def _artifact(command: str, cfg: RunConfig, seed: int, **body) -> dict:
    return {"tool": "dgp", "version": __version__, "command": command, "seed": seed,
            "config": cfg.to_dict(), **body}


def _config(path) -> RunConfig:
    return load_config(path) if path else RunConfig()


def workers() -> int:
    env = os.environ.get("DGP_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"DGP_THREADS must be an integer, got {env!r}") from None
        if n < 1:
            raise UsageError("DGP_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


# ---------------------------------------------------------------- fit

def cmd_fit(args) -> int:
    cfg = _config(args.config).with_seed(args.seed)
    ds = load_csv(args.data, args.target)
    ds = split(ds, cfg.data.train_fraction, np.random.default_rng([args.seed, _SPLIT]))
    res = run("dgp", ds, cfg.engine)
    art = _artifact("fit", cfg, args.seed,
                    data={"path": str(args.data), "target": ds.target_name,
                          "variables": list(ds.variable_names), "n_train": len(ds.train_idx),
                          "n_test": len(ds.test_idx)},
                    result=res.to_dict())
    write_json(args.out, art)
    log.info("best %s  train nrmse %.3e  test r2 %s", format_prefix(res.best_tree),
             res.best_train_nrmse, res.test_metrics.get("r2"))
    return 0


# ---------------------------------------------------------------- synth

def run_trial(bench: str, method: str, level: float, seed: int, cfg: RunConfig) -> dict:
    """One seeded synthetic trial; returns the trial artifact."""
    spec = SyntheticSpec(bench, cfg.data.points)
    ds = generate_synthetic(spec, np.random.default_rng([seed, _DATA]))
    noise = NoiseSpec(level, cfg.noise.test_targets)
    ds = add_noise(ds, noise, np.random.default_rng([seed, _NOISE]))
    cfg = cfg.with_seed(seed)
    res = run(method, ds, cfg.engine)
    recovered = numeric_equiv(res.best_tree, spec.truth, spec.domain)
    return _artifact("synth", cfg, seed, benchmark=bench, method=method, noise=level,
                     ground_truth=format_prefix(spec.truth), recovered=bool(recovered),
                     result=res.to_dict())


def _trial_name(bench, method, level, seed) -> str:
    return f"{bench}_{method}_noise{level:g}_seed{seed}.json"


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.noise_sweep and args.noise is not None:
        raise UsageError("--noise and --noise-sweep are exclusive")
    if args.noise_sweep:
        levels = list(NOISE_GRID)
    else:
        levels = [args.noise if args.noise is not None else cfg.noise.level]
    if any(v < 0 for v in levels):
        raise UsageError("noise level must be >= 0")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(args.bench, args.method, lvl, args.seed + i, cfg) for lvl in levels
            for i in range(args.trials)]
    n_workers = min(workers(), len(jobs))
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            arts = list(pool.map(run_trial, *zip(*jobs)))
    else:
        arts = [run_trial(*j) for j in jobs]

    rows, raw = [], []
    for lvl in levels:
        recs = []
        for a in (a for a in arts if a["noise"] == lvl):
            write_json(out / _trial_name(args.bench, args.method, lvl, a["seed"]), a)
            m = a["result"]["test_metrics"]
            rec = TrialRecord(a["seed"], m["r2"], m["rmse"], a["recovered"],
                              a["result"]["program_size"])
            recs.append(rec)
            raw.append((args.bench, args.method, lvl, rec))
        s = aggregate(recs)
        rows.append(summary_row(args.bench, args.method, lvl, s))
        log.info("%s %s noise=%g recovery=%.0f%% rmse=%.4g size=%.1f", args.bench, args.method,
                 lvl, s.recovery_rate, s.rmse.mean, s.program_size.mean)
    write_summary_csv(out / "summary.csv", rows)
    write_trials_csv(out / "trials.csv", raw)
    return 0


# ---------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    tree = parse_prefix(args.expr)
    ds = load_csv(args.data, args.target)
    validate(tree, d=ds.d)
    pred = evaluate_batch(tree, ds.X)
    print(f"r2\t{r2(ds.y, pred):.12g}")
    print(f"rmse\t{rmse(ds.y, pred):.12g}")
    print(f"nrmse\t{nrmse(ds.y, pred):.12g}")
    print(f"size\t{tree_size(simplify(tree))}")
    return 0


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dgp", description="Differentiable genetic programming for symbolic regression.")
    p.add_argument("--version", action="version", version=f"dgp {__version__}")
    p.add_argument("--quiet", action="store_true", help="suppress progress lines on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit a CSV dataset (75/25 split)")
    f.add_argument("--data", required=True)
    f.add_argument("--target", help="target column (default: last)")
    f.add_argument("--config", help="TOML run configuration")
    f.add_argument("--seed", type=_seed, default=0)
    f.add_argument("--out", required=True, help="result JSON path")
    f.set_defaults(func=cmd_fit)

    s = sub.add_parser("synth", help="seeded trials on a synthetic benchmark")
    s.add_argument("--bench", required=True, choices=sorted(BENCHMARKS))
    s.add_argument("--trials", type=int, default=10)
    s.add_argument("--noise", type=float, help="relative noise level on training targets")
    s.add_argument("--noise-sweep", action="store_true", help="run every level 0, 0.01, ..., 0.1")
    s.add_argument("--method", choices=("dgp", "gp"), default="dgp")
    s.add_argument("--config", help="TOML run configuration")
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="score a prefix expression on a CSV")
    e.add_argument("--expr", required=True, help='e.g. "(+ x0 (sin x1))"')
    e.add_argument("--data", required=True)
    e.add_argument("--target")
    e.set_defaults(func=cmd_eval)
    for sp in (f, s, e):
        sp.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS,
                        help="suppress progress lines on stderr")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"dgp: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        return args.func(args)
    except DegenerateTargetError as exc:
        print(f"dgp: degenerate data: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, DatasetError, ExpressionParseError, TreeError,
            ValueError, OSError) as exc:
        print(f"dgp: error: {exc}", file=sys.stderr)
        return 1
