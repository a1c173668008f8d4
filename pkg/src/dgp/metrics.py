"""Evaluation metrics and multi-trial aggregation."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateTargetError

SENTINEL = 1e12


def r2(y, y_pred) -> float:
    """Coefficient of determination over pairs with a finite prediction."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.shape != p.shape:
        raise ValueError("r2 needs equal-length vectors")
    keep = np.isfinite(p)
    y, p = y[keep], p[keep]
    if len(y) < 2:
        raise ValueError("r2 needs at least two finite predictions")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise DegenerateTargetError("degenerate target: zero variance")
    return float(1.0 - np.sum((y - p) ** 2) / ss_tot)


def rmse(y, y_pred) -> float:
    y = np.asarray(y, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.shape != p.shape or y.size < 1:
        raise ValueError("rmse needs equal-length non-empty vectors")
    p = np.where(np.isfinite(p), p, SENTINEL)
    return float(np.sqrt(np.mean((y - p) ** 2)))


def recovery_rate(recovered: Sequence[bool]) -> float:
    if len(recovered) == 0:
        raise ValueError("recovery rate needs at least one trial")
    return 100.0 * sum(bool(r) for r in recovered) / len(recovered)


@dataclass(frozen=True)
class TrialRecord:
    seed: int
    r2: float
    rmse: float
    recovered: bool
    program_size: int


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float
    median: float

    @classmethod
    def of(cls, values) -> "Stat":
        v = np.asarray(list(values), dtype=float)
        if v.size == 0:
            return cls(float("nan"), float("nan"), float("nan"))
        return cls(float(v.mean()), float(v.std()), float(np.median(v)))


@dataclass(frozen=True)
class TrialSummary:
    trials: tuple[TrialRecord, ...]
    r2: Stat
    rmse: Stat
    program_size: Stat
    recovered_size: Stat
    recovery_rate: float

    @property
    def n_trials(self) -> int:
        return len(self.trials)


def aggregate(trials: Iterable[TrialRecord]) -> TrialSummary:
    """Population-std summary; records are ordered by seed so input order is irrelevant."""
    ts = tuple(sorted(trials, key=lambda t: t.seed))
    if not ts:
        raise ValueError("aggregate needs at least one trial")
    return TrialSummary(
        trials=ts,
        r2=Stat.of(t.r2 for t in ts),
        rmse=Stat.of(t.rmse for t in ts),
        program_size=Stat.of(t.program_size for t in ts),
        recovered_size=Stat.of(t.program_size for t in ts if t.recovered),
        recovery_rate=recovery_rate([t.recovered for t in ts]),
    )


SUMMARY_FIELDS = ["benchmark", "method", "noise", "trials", "recovery_rate",
                  "r2_mean", "r2_std", "r2_median", "rmse_mean", "rmse_std", "rmse_median",
                  "size_mean", "size_std", "size_median", "recovered_size_mean", "recovered_size_std"]


def summary_row(benchmark: str, method: str, noise: float, s: TrialSummary) -> dict:
    return {
        "benchmark": benchmark, "method": method, "noise": noise, "trials": s.n_trials,
        "recovery_rate": s.recovery_rate,
        "r2_mean": s.r2.mean, "r2_std": s.r2.std, "r2_median": s.r2.median,
        "rmse_mean": s.rmse.mean, "rmse_std": s.rmse.std, "rmse_median": s.rmse.median,
        "size_mean": s.program_size.mean, "size_std": s.program_size.std,
        "size_median": s.program_size.median,
        "recovered_size_mean": s.recovered_size.mean, "recovered_size_std": s.recovered_size.std,
    }


def write_summary_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def write_trials_csv(path, rows: Sequence[tuple[str, str, float, TrialRecord]]) -> None:
    """Raw per-seed results, one line per (benchmark, method, noise, seed)."""
    fields = ["benchmark", "method", "noise", "seed", "r2", "rmse", "recovered", "program_size"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for bench, method, noise, t in rows:
            rec = asdict(t)
            w.writerow({"benchmark": bench, "method": method, "noise": noise,
                        **{k: _fmt(v) for k, v in rec.items()}})


def _fmt(v):
    return repr(v) if isinstance(v, float) else v
