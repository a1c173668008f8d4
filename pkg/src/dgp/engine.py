"""The search loop: initialise, relax + train + sample each individual, diversify, repeat.

Also hosts the canonical GP baseline, which shares initialisation, operators,
budget accounting and reporting but skips relaxation and training.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .data import Dataset
from .dst import InitConfig, relax
from .errors import DegenerateTargetError
from .expr import (Caps, PrimitiveSet, SymbolicTree, evaluate_batch, format_prefix,
                   ramped_half_and_half, simplify, to_infix, tree_size)
from .grad import LossConfig, TrainConfig, nrmse, train_dst
from .metrics import r2, rmse
from .sampler import GeneticConfig, SampleConfig, diversify, sample_tree

log = logging.getLogger(__name__)

# tags mixed into per-stage seeds so no two stages share a stream
_INIT, _OPT, _DIV, _GP = 0, 1, 2, 3


@dataclass
class EngineConfig:
    population_size: int = 500
    max_evaluations: int = 100_000
    early_stop_nrmse: float = 1e-6
    seed: int = 0
    epoch_eval_cost: int = 1
    init_depth: tuple[int, int] = (1, 3)
    max_nodes: int = 64
    max_depth: int = 8
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    genetic: GeneticConfig = field(default_factory=GeneticConfig)
    init: InitConfig = field(default_factory=InitConfig)

    @classmethod
    def synthetic_preset(cls, **kw) -> "EngineConfig":
        kw.setdefault("population_size", 1000)
        kw.setdefault("max_evaluations", 500_000)
        return cls(**kw)

    @property
    def caps(self) -> Caps:
        return Caps(self.max_nodes, self.max_depth)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_depth"] = list(self.init_depth)
        d["genetic"]["mutate_depth"] = list(self.genetic.mutate_depth)
        return d


class Budget:
    """Shared evaluation counter; also carries the early-stop flag."""

    def __init__(self, max_evaluations: int):
        self.max = int(max_evaluations)
        self.used = 0
        self.stopped = False

    def spend(self, n: int = 1) -> int:
        self.used += n
        return self.remaining

    @property
    def remaining(self) -> int:
        return max(self.max - self.used, 0)

    @property
    def exhausted(self) -> bool:
        return self.stopped or self.used >= self.max


def budget_account(budget: Budget, event: str, cfg: EngineConfig | None = None, count: int = 1) -> int:
    """Charge ``count`` events ("fitness" or "epoch") and return what is left."""
    if event == "fitness":
        cost = 1
    elif event == "epoch":
        cost = cfg.epoch_eval_cost if cfg is not None else 1
    else:
        raise ValueError(f"unknown budget event {event!r}")
    return budget.spend(cost * count)


class Evaluator:
    """Training-set NRMSE of discrete trees, with budget, global best and early stop."""

    def __init__(self, X: np.ndarray, y: np.ndarray, budget: Budget, early_stop: float):
        self.X = X
        self.y = y
        self.budget = budget
        self.early_stop = early_stop
        self.best_tree: SymbolicTree | None = None
        self.best_fitness = math.inf

    def __call__(self, tree: SymbolicTree) -> float:
        f = nrmse(self.y, evaluate_batch(tree, self.X))
        budget_account(self.budget, "fitness")
        if f < self.best_fitness:
            self.best_fitness, self.best_tree = f, tree
        if f < self.early_stop:
            self.budget.stopped = True
        return f


@dataclass
class Individual:
    tree: SymbolicTree
    train_fitness: float


@dataclass
class RunResult:
    method: str
    best_tree: SymbolicTree
    best_train_nrmse: float
    test_metrics: dict
    program_size: int
    evaluations_used: int
    iterations_completed: int
    early_stopped: bool
    wall_time: float
    history: list
    seed: int
    final_population_best: Individual
    config: dict = field(default_factory=dict)
    variable_names: tuple = ()

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "best_tree": format_prefix(self.best_tree),
            "best_tree_infix": to_infix(self.best_tree, self.variable_names or None),
            "best_train_nrmse": self.best_train_nrmse,
            "test_metrics": dict(self.test_metrics),
            "program_size": self.program_size,
            "evaluations_used": self.evaluations_used,
            "iterations_completed": self.iterations_completed,
            "early_stopped": self.early_stopped,
            "wall_time": self.wall_time,
            "history": list(self.history),
            "seed": self.seed,
            "final_population_best": {
                "tree": format_prefix(self.final_population_best.tree),
                "train_nrmse": self.final_population_best.train_fitness,
            },
            "config": self.config,
        }


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _check_target(y: np.ndarray) -> None:
    if len(y) < 2 or np.std(y) == 0:
        raise DegenerateTargetError("degenerate target: training targets have zero variance")


def initialize_population(cfg: EngineConfig, ps: PrimitiveSet, rng: np.random.Generator,
                          evaluate: Callable[[SymbolicTree], float]) -> list[Individual]:
    trees = ramped_half_and_half(rng, cfg.population_size, cfg.init_depth, ps)
    pop = []
    for t in trees:
        pop.append(Individual(t, evaluate(t)))
    return pop


def _test_metrics(tree: SymbolicTree, X: np.ndarray, y: np.ndarray) -> dict:
    pred = evaluate_batch(tree, X)
    out = {"rmse": rmse(y, pred)}
    try:
        out["r2"] = r2(y, pred)
        out["nrmse"] = nrmse(y, pred)
    except (DegenerateTargetError, ValueError):
        out["r2"] = float("nan")
        out["nrmse"] = float("nan")
    return out


def _snapshot(it: int, budget: Budget, ev: Evaluator, pop: list[Individual]) -> dict:
    fits = [p.train_fitness for p in pop]
    return {
        "iteration": it,
        "evaluations_used": budget.used,
        "best_train_nrmse": ev.best_fitness,
        "population_best": float(min(fits)),
        "population_median": float(np.median(fits)),
        "mean_size": float(np.mean([p.tree.size for p in pop])),
    }


def _finish(method, cfg, ds, ev, budget, pop, history, it, t0) -> RunResult:
    best = ev.best_tree
    fb = min(pop, key=lambda p: p.train_fitness)
    return RunResult(
        method=method,
        best_tree=best,
        best_train_nrmse=ev.best_fitness,
        test_metrics=_test_metrics(best, ds.X_test, ds.y_test),
        program_size=tree_size(simplify(best)),
        evaluations_used=budget.used,
        iterations_completed=it,
        early_stopped=ev.best_fitness < cfg.early_stop_nrmse,
        wall_time=time.perf_counter() - t0,
        history=history,
        seed=cfg.seed,
        final_population_best=fb,
        config=cfg.to_dict(),
        variable_names=tuple(ds.variable_names),
    )


def dgp_run(ds: Dataset, cfg: EngineConfig) -> RunResult:
    t0 = time.perf_counter()
    X, y = ds.X_train, ds.y_train
    _check_target(y)
    ps = PrimitiveSet.default(ds.d)
    caps = cfg.caps
    budget = Budget(cfg.max_evaluations)
    ev = Evaluator(X, y, budget, cfg.early_stop_nrmse)
    pop = initialize_population(cfg, ps, _rng(cfg.seed, _INIT), ev)
    history = [_snapshot(0, budget, ev, pop)]
    it = 0
    while not budget.exhausted:
        it += 1
        nxt = []
        for k, ind in enumerate(pop):
            if budget.exhausted:
                nxt.append(ind)
                continue
            rng = _rng(cfg.seed, _OPT, it, k)
            epochs = min(cfg.train.epochs, max(1, budget.remaining // cfg.epoch_eval_cost))
            res = train_dst(relax(ind.tree, ps, cfg.init), X, y, cfg.train, cfg.loss, rng, epochs)
            budget_account(budget, "epoch", cfg, epochs)
            best = None
            for _ in range(cfg.sample.samples_per_dst):
                cand = sample_tree(res.dst, rng, cfg.sample, caps)
                f = ev(cand)
                if best is None or f < best.train_fitness:
                    best = Individual(cand, f)
            nxt.append(best)
        pop = nxt
        if not budget.exhausted:
            trees, fits = diversify([p.tree for p in pop], [p.train_fitness for p in pop], ev,
                                    cfg.genetic, _rng(cfg.seed, _DIV, it), ps, caps, budget)
            pop = [Individual(t, f) for t, f in zip(trees, fits)]
        history.append(_snapshot(it, budget, ev, pop))
        log.info("dgp seed=%d iter=%d evals=%d best=%.3e", cfg.seed, it, budget.used, ev.best_fitness)
    return _finish("dgp", cfg, ds, ev, budget, pop, history, it, t0)


def canonical_gp_run(ds: Dataset, cfg: EngineConfig) -> RunResult:
    """Standard generational GP under the same budget and reporting."""
    t0 = time.perf_counter()
    X, y = ds.X_train, ds.y_train
    _check_target(y)
    ps = PrimitiveSet.default(ds.d)
    caps = cfg.caps
    budget = Budget(cfg.max_evaluations)
    ev = Evaluator(X, y, budget, cfg.early_stop_nrmse)
    pop = initialize_population(cfg, ps, _rng(cfg.seed, _INIT), ev)
    history = [_snapshot(0, budget, ev, pop)]
    gen = 0
    while not budget.exhausted:
        gen += 1
        used = budget.used
        trees, fits = diversify([p.tree for p in pop], [p.train_fitness for p in pop], ev,
                                cfg.genetic, _rng(cfg.seed, _GP, gen), ps, caps, budget,
                                generations=1)
        pop = [Individual(t, f) for t, f in zip(trees, fits)]
        history.append(_snapshot(gen, budget, ev, pop))
        if budget.used == used:
            # nothing was varied, so no new tree can ever appear
            log.info("gp seed=%d stalled at generation %d", cfg.seed, gen)
            break
    log.info("gp seed=%d gens=%d evals=%d best=%.3e", cfg.seed, gen, budget.used, ev.best_fitness)
    return _finish("gp", cfg, ds, ev, budget, pop, history, gen, t0)


def run(method: str, ds: Dataset, cfg: EngineConfig) -> RunResult:
    if method == "dgp":
        return dgp_run(ds, cfg)
    if method == "gp":
        return canonical_gp_run(ds, cfg)
    raise ValueError(f"unknown method {method!r}")
