"""Datasets: CSV ingestion, train/test splitting, synthetic benchmarks, target noise."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetError
from .expr import SymbolicTree, evaluate_batch, parse_prefix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    variable_names: tuple[str, ...]
    train_idx: np.ndarray
    test_idx: np.ndarray
    target_name: str = "y"
    name: str = ""
    ground_truth: SymbolicTree | None = None
    domain: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DatasetError(f"X must be n x d and y length n, got {X.shape} and {y.shape}")
        if X.shape[0] < 4:
            raise DatasetError(f"need at least 4 rows, got {X.shape[0]}")
        if len(self.variable_names) != X.shape[1]:
            raise DatasetError("one name per input column is required")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DatasetError("dataset contains non-finite values")
        tr = np.asarray(self.train_idx, dtype=np.int64)
        te = np.asarray(self.test_idx, dtype=np.int64)
        both = np.concatenate([tr, te])
        if len(both) != X.shape[0] or len(np.unique(both)) != X.shape[0] or \
                (len(both) and (both.min() < 0 or both.max() >= X.shape[0])):
            raise DatasetError("train/test indices must partition the rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "variable_names", tuple(self.variable_names))
        object.__setattr__(self, "train_idx", tr)
        object.__setattr__(self, "test_idx", te)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def X_train(self) -> np.ndarray:
        return self.X[self.train_idx]

    @property
    def y_train(self) -> np.ndarray:
        return self.y[self.train_idx]

    @property
    def X_test(self) -> np.ndarray:
        return self.X[self.test_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.y[self.test_idx]


def load_csv(path, target_column: str | None = None) -> Dataset:
    """Read a headered, all-numeric CSV; the target defaults to the last column."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if target_column is None:
        t = len(header) - 1
    elif target_column in header:
        t = header.index(target_column)
    else:
        raise DatasetError(f"{path}: no column named {target_column!r} (have {', '.join(header)})")
    values = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DatasetError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise DatasetError(f"{path}: row {lineno} has a non-numeric cell") from None
        if not all(math.isfinite(v) for v in vals):
            raise DatasetError(f"{path}: row {lineno} has a non-finite cell")
        values.append(vals)
    if len(values) < 4:
        raise DatasetError(f"{path}: need at least 4 data rows, got {len(values)}")
    A = np.array(values)
    y = A[:, t]
    X = np.delete(A, t, axis=1)
    if X.shape[1] == 0:
        raise DatasetError(f"{path}: no feature columns")
    if np.std(y) == 0:
        log.warning("%s: target column %r is constant; training will fail", path, header[t])
    names = tuple(h for k, h in enumerate(header) if k != t)
    return Dataset(X, y, names, np.arange(len(y)), np.array([], dtype=np.int64),
                   target_name=header[t], name=path.stem)


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(ds.variable_names) + [ds.target_name])
        for x, y in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


def split(ds: Dataset, train_fraction: float = 0.75, rng: np.random.Generator | None = None) -> Dataset:
    """Shuffled partition with round(train_fraction * n) training rows."""
    if not 0 < train_fraction <= 1:
        raise ValueError("train_fraction must be in (0, 1]")
    rng = rng if rng is not None else np.random.default_rng()
    perm = rng.permutation(ds.n)
    k = int(round(train_fraction * ds.n))
    k = min(max(k, 1), ds.n)
    return replace(ds, train_idx=np.sort(perm[:k]), test_idx=np.sort(perm[k:]))


# ---------------------------------------------------------------- synthetic benchmarks

# No constants exist in the primitive set, so 1 is written cos(x0 - x0) and
# 4 sin(x) as a sum of four sin(x) terms.
BENCHMARKS = {
    "S1": ("sin(x^2) cos(x) - 1", "(- (* (sin (* x0 x0)) (cos x0)) (cos (- x0 x0)))", 1, (-1.0, 1.0)),
    "S2": ("log(x + 1) + log(x^2 + 1)",
           "(+ (log (+ x0 (cos (- x0 x0)))) (log (+ (* x0 x0) (cos (- x0 x0)))))", 1, (0.0, 2.0)),
    "S3": ("x^3 + x^2 + x + sin(x) + sin(x^2)",
           "(+ (+ (+ (+ (* x0 (* x0 x0)) (* x0 x0)) x0) (sin x0)) (sin (* x0 x0)))", 1, (-1.0, 1.0)),
    "S4": ("sin(x) + sin(y^2)", "(+ (sin x0) (sin (* x1 x1)))", 2, (0.0, 1.0)),
    "S5": ("x^4 / (x + y)", "(/ (* (* x0 x0) (* x0 x0)) (+ x0 x1))", 2, (-1.0, 1.0)),
    "S6": ("4 sin(x) cos(y)", "(* (+ (+ (sin x0) (sin x0)) (+ (sin x0) (sin x0))) (cos x1))", 2, (0.0, 1.0)),
}


@dataclass(frozen=True)
class SyntheticSpec:
    benchmark: str
    points: int = 20  # per split

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ValueError(f"unknown benchmark {self.benchmark!r}; choose from {sorted(BENCHMARKS)}")
        if self.points < 2:
            raise ValueError("points per split must be >= 2")

    @property
    def truth(self) -> SymbolicTree:
        return parse_prefix(BENCHMARKS[self.benchmark][1])

    @property
    def d(self) -> int:
        return BENCHMARKS[self.benchmark][2]

    @property
    def domain(self) -> tuple[tuple[float, float], ...]:
        return (BENCHMARKS[self.benchmark][3],) * self.d


def _draw_points(spec: SyntheticSpec, rng: np.random.Generator, m: int) -> np.ndarray:
    lo, hi = BENCHMARKS[spec.benchmark][3]
    truth = spec.truth
    out = np.empty((0, spec.d))
    while len(out) < m:
        X = rng.uniform(lo, hi, size=(m, spec.d))
        ok = np.all(X > lo, axis=1)  # open interval
        if spec.benchmark == "S5":
            ok &= np.abs(X[:, 0] + X[:, 1]) >= 1e-3
        _, fired = evaluate_batch(truth, X, return_flags=True)
        out = np.vstack([out, X[ok & ~fired]])
    return out[:m]


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator) -> Dataset:
    """``points`` training then ``points`` test samples, uniform in the benchmark range."""
    X = np.vstack([_draw_points(spec, rng, spec.points), _draw_points(spec, rng, spec.points)])
    truth = spec.truth
    y = evaluate_batch(truth, X)
    names = tuple(("x", "y")[:spec.d]) if spec.d <= 2 else tuple(f"x{i}" for i in range(spec.d))
    p = spec.points
    return Dataset(X, y, names, np.arange(p), np.arange(p, 2 * p), target_name="f",
                   name=spec.benchmark, ground_truth=truth, domain=spec.domain)


# ---------------------------------------------------------------- noise

NOISE_GRID = tuple(round(0.01 * k, 2) for k in range(11))


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.0
    test_targets: bool = False

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be >= 0")


def add_noise(ds: Dataset, spec: NoiseSpec, rng: np.random.Generator) -> Dataset:
    """Add N(0, (level * RMS(y_train))^2) noise to the training targets (and optionally test)."""
    if spec.level == 0:
        return ds
    ytr = ds.y_train
    sigma = spec.level * float(np.sqrt(np.mean(ytr ** 2)))
    y = ds.y.copy()
    y[ds.train_idx] += rng.normal(0.0, sigma, size=len(ds.train_idx))
    if spec.test_targets:
        y[ds.test_idx] += rng.normal(0.0, sigma, size=len(ds.test_idx))
    return replace(ds, y=y)
