import numpy as np
import pytest

from dgp.data import Dataset, SyntheticSpec, generate_synthetic
from dgp.engine import (Budget, EngineConfig, Evaluator, budget_account, canonical_gp_run,
                        dgp_run, initialize_population, run)
from dgp.errors import DegenerateTargetError
from dgp.expr import PrimitiveSet, validate
from dgp.grad import TrainConfig
from dgp.sampler import GeneticConfig, diversify


def small_cfg(**kw):
    kw.setdefault("population_size", 10)
    kw.setdefault("max_evaluations", 1500)
    kw.setdefault("train", TrainConfig(epochs=20))
    kw.setdefault("genetic", GeneticConfig(generations_per_iteration=3))
    return EngineConfig(**kw)


def dataset(bench="S4", seed=0):
    return generate_synthetic(SyntheticSpec(bench), np.random.default_rng(seed))


def strip_time(res):
    d = res.to_dict()
    d.pop("wall_time")
    return d


# ---------------------------------------------------------------- budget

def test_budget_events():
    b = Budget(100)
    assert budget_account(b, "fitness") == 99
    assert budget_account(b, "epoch", EngineConfig(), 50) == 49
    assert budget_account(b, "epoch", EngineConfig(epoch_eval_cost=2), 10) == 29
    with pytest.raises(ValueError):
        budget_account(b, "nap")


def test_one_individual_trained_for_1000_epochs_costs_1000():
    b = Budget(10**6)
    budget_account(b, "epoch", EngineConfig(), 1000)
    assert b.used == 1000


def test_initialization_costs_one_evaluation_per_individual():
    ds = dataset()
    b = Budget(10**6)
    ev = Evaluator(ds.X_train, ds.y_train, b, 1e-6)
    cfg = EngineConfig(population_size=500)
    pop = initialize_population(cfg, PrimitiveSet.default(2), np.random.default_rng(0), ev)
    assert len(pop) == 500 and b.used == 500
    assert all(p.tree.depth <= 3 for p in pop)


def test_initialization_is_seeded_and_single_individual_works():
    ds = dataset()
    ps = PrimitiveSet.default(2)

    def init(seed, n):
        ev = Evaluator(ds.X_train, ds.y_train, Budget(10**6), 1e-6)
        return [p.tree for p in initialize_population(EngineConfig(population_size=n), ps,
                                                      np.random.default_rng(seed), ev)]

    assert init(3, 50) == init(3, 50)
    one = init(3, 1)
    assert len(one) == 1
    validate(one[0], EngineConfig().caps, 2)


def test_diversify_evaluation_count_bound():
    ds = dataset()
    ps = PrimitiveSet.default(2)
    b = Budget(10**7)
    ev = Evaluator(ds.X_train, ds.y_train, b, 0.0)
    pop = initialize_population(EngineConfig(population_size=500), ps, np.random.default_rng(1), ev)
    before = b.used
    diversify([p.tree for p in pop], [p.train_fitness for p in pop], ev, GeneticConfig(),
              np.random.default_rng(2), ps, EngineConfig().caps, b)
    assert b.used - before <= 20 * 500


# ---------------------------------------------------------------- runs

def test_tiny_budget_returns_best_initial_individual():
    ds = dataset()
    cfg = small_cfg(population_size=30, max_evaluations=10)
    res = dgp_run(ds, cfg)
    assert res.iterations_completed == 0
    assert res.evaluations_used <= cfg.max_evaluations + cfg.population_size
    assert res.best_train_nrmse == min(h["population_best"] for h in res.history[:1])


@pytest.mark.parametrize("method", ["dgp", "gp"])
def test_runs_are_deterministic(method):
    ds = dataset("S1")
    cfg = small_cfg(seed=7)
    assert strip_time(run(method, ds, cfg)) == strip_time(run(method, ds, cfg))


@pytest.mark.parametrize("method", ["dgp", "gp"])
def test_run_invariants(method):
    ds = dataset("S1", seed=2)
    cfg = small_cfg(seed=1, max_evaluations=2500)
    res = run(method, ds, cfg)
    best = [h["best_train_nrmse"] for h in res.history]
    assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
    assert res.evaluations_used <= cfg.max_evaluations + cfg.population_size
    validate(res.best_tree, cfg.caps, ds.d)
    validate(res.final_population_best.tree, cfg.caps, ds.d)
    assert res.best_train_nrmse <= res.final_population_best.train_fitness
    assert set(res.test_metrics) == {"rmse", "r2", "nrmse"}
    assert res.early_stopped == (res.best_train_nrmse < cfg.early_stop_nrmse)


@pytest.mark.parametrize("mutation_rate", [0.0, 0.05])
def test_low_variation_gp_is_monotone_and_terminates(mutation_rate):
    ds = dataset("S1")
    cfg = small_cfg(genetic=GeneticConfig(crossover_rate=0.0, mutation_rate=mutation_rate))
    res = canonical_gp_run(ds, cfg)
    pb = [h["population_best"] for h in res.history]
    assert all(b2 <= b1 for b1, b2 in zip(pb, pb[1:]))
    if mutation_rate == 0.0:
        assert res.iterations_completed == 1  # stalled: no evaluations possible


def test_early_stop_on_an_easy_target():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (40, 2))
    ds = Dataset(X, X[:, 0] * X[:, 1], ("a", "b"), np.arange(30), np.arange(30, 40))
    cfg = small_cfg(population_size=200, max_evaluations=100_000)
    res = dgp_run(ds, cfg)
    assert res.early_stopped and res.best_train_nrmse < 1e-6
    assert res.evaluations_used < cfg.max_evaluations
    assert res.test_metrics["r2"] == pytest.approx(1.0)


def test_no_early_stop_when_threshold_is_zero():
    cfg = small_cfg(early_stop_nrmse=0.0)
    res = canonical_gp_run(dataset("S1"), cfg)
    assert not res.early_stopped and res.evaluations_used >= cfg.max_evaluations


def test_constant_target_is_degenerate():
    X = np.random.default_rng(0).uniform(size=(10, 1))
    ds = Dataset(X, np.ones(10), ("x",), np.arange(8), np.arange(8, 10))
    with pytest.raises(DegenerateTargetError):
        dgp_run(ds, small_cfg())


def test_unknown_method():
    with pytest.raises(ValueError):
        run("sgd", dataset(), small_cfg())


def test_result_dict_round_trips_tree_text():
    from dgp.expr import parse_prefix

    res = dgp_run(dataset(), small_cfg())
    d = res.to_dict()
    assert parse_prefix(d["best_tree"]) == res.best_tree
    assert d["config"]["population_size"] == 10 and d["seed"] == 0


def test_synthetic_preset():
    cfg = EngineConfig.synthetic_preset()
    assert cfg.population_size == 1000 and cfg.max_evaluations == 500_000
