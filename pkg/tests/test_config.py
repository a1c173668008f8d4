import pytest

from dgp.config import ConfigError, RunConfig, config_from_dict, load_config


def test_defaults_match_home_modules():
    cfg = RunConfig()
    e = cfg.engine
    assert (e.population_size, e.max_evaluations, e.early_stop_nrmse) == (500, 100_000, 1e-6)
    assert (e.train.epochs, e.train.lr_node, e.train.lr_edge) == (1000, 0.005, 0.005)
    assert e.loss.lambda_01 == 0.1 and e.sample.temperature == 1.0
    assert (e.genetic.crossover_rate, e.genetic.mutation_rate, e.genetic.tournament_size) == (0.5, 0.5, 3)
    assert (e.init.hot_logit, e.init.edge_logit) == (4.0, 2.0)
    assert cfg.data.train_fraction == 0.75 and cfg.noise.level == 0.0


def test_load_nested_file(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text("""
# desk-scale settings
[engine]
population_size = 50
max_evaluations = 50000
init_depth = [1, 2]

[train]
epochs = 200
lr_node = 1e-2

[genetic]
mutate_depth = [0, 1]

[data]
points = 30

[noise]
level = 0.05
""")
    cfg = load_config(p)
    assert cfg.engine.population_size == 50 and cfg.engine.init_depth == (1, 2)
    assert cfg.engine.train.epochs == 200 and cfg.engine.train.lr_node == 0.01
    assert cfg.engine.train.lr_edge == 0.005  # untouched default
    assert cfg.engine.genetic.mutate_depth == (0, 1)
    assert cfg.data.points == 30 and cfg.noise.level == 0.05


def test_effective_config_is_complete_and_round_trips():
    d = RunConfig().to_dict()
    assert set(d) == {"engine", "train", "loss", "sample", "genetic", "init", "data", "noise"}
    raw = {k: dict(v) for k, v in d.items()}
    raw["engine"].pop("seed")
    assert config_from_dict(raw).to_dict() == d


@pytest.mark.parametrize("raw, match", [
    ({"engin": {}}, "unknown section"),
    ({"engine": {"pop": 3}}, "unknown key"),
    ({"engine": {"seed": 3}}, "unknown key"),
    ({"train": {"epochs": 1.5}}, "integer"),
    ({"train": {"epochs": True}}, "integer"),
    ({"loss": {"lambda_01": "big"}}, "number"),
    ({"init": {"scale_binary_inputs": 1}}, "true/false"),
    ({"engine": {"init_depth": [1]}}, "list of 2"),
    ({"engine": {"population_size": 0}}, "population_size"),
    ({"genetic": {"crossover_rate": 2.0}}, "crossover_rate"),
    ({"sample": {"temperature": 0.0}}, "temperature"),
    ({"noise": {"level": -1.0}}, "noise"),
    ({"data": {"train_fraction": 0.0}}, "train_fraction"),
    ({"engine": 3}, "table"),
])
def test_validation_errors(raw, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(raw)


def test_bad_toml_and_missing_file(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("[engine\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError, match="no such"):
        load_config(tmp_path / "missing.toml")


def test_with_seed():
    assert RunConfig().with_seed(42).engine.seed == 42
