"""Run configuration: TOML file -> validated, default-merged dataclasses.

Sections and keys mirror the config dataclasses::

    [engine]   population_size, max_evaluations, early_stop_nrmse, epoch_eval_cost,
               init_depth, max_nodes, max_depth
    [train]    epochs, batch_size, lr_node, lr_edge, beta1, beta2, eps, batches_per_epoch
    [loss]     lambda_01
    [sample]   temperature, samples_per_dst
    [genetic]  crossover_rate, mutation_rate, tournament_size,
               generations_per_iteration, mutate_depth
    [init]     hot_logit, edge_logit, scale_binary_inputs
    [data]     train_fraction, points
    [noise]    level, test_targets

Unknown sections or keys are errors.  The seed comes from the command line.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .data import NoiseSpec
from .dst import InitConfig
from .engine import EngineConfig
from .grad import LossConfig, TrainConfig
from .sampler import GeneticConfig, SampleConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    train_fraction: float = 0.75
    points: int = 20


@dataclass
class RunConfig:
    engine: EngineConfig = field(default_factory=EngineConfig)
    data: DataConfig = field(default_factory=DataConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(self, engine=dataclasses.replace(self.engine, seed=int(seed)))

    def to_dict(self) -> dict:
        e = self.engine.to_dict()
        return {
            "engine": {k: v for k, v in e.items()
                       if k not in ("train", "loss", "sample", "genetic", "init")},
            "train": e["train"], "loss": e["loss"], "sample": e["sample"],
            "genetic": e["genetic"], "init": e["init"],
            "data": dataclasses.asdict(self.data),
            "noise": dataclasses.asdict(self.noise),
        }


_NESTED = {"train": TrainConfig, "loss": LossConfig, "sample": SampleConfig,
           "genetic": GeneticConfig, "init": InitConfig}
_ENGINE_KEYS = {f.name for f in dataclasses.fields(EngineConfig)} - set(_NESTED) - {"seed"}


def _coerce(name: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not (isinstance(value, list) and len(value) == len(default)
                and all(isinstance(v, int) and not isinstance(v, bool) for v in value)):
            raise ConfigError(f"{name}: expected a list of {len(default)} integers, got {value!r}")
        return tuple(value)
    if default is None:  # optional int (batch_size)
        if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    raise ConfigError(f"{name}: unsupported value {value!r}")


def _build(cls, section: str, values: dict, allowed: set[str] | None = None):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    allowed = set(fields) if allowed is None else allowed
    unknown = set(values) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    defaults = cls()
    return {k: _coerce(f"{section}.{k}", v, getattr(defaults, k)) for k, v in values.items()}


def config_from_dict(raw: dict) -> RunConfig:
    sections = {"engine", "data", "noise", *_NESTED}
    unknown = set(raw) - sections
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    for name, body in raw.items():
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table")
    try:
        nested = {name: cls(**_build(cls, name, raw.get(name, {}))) for name, cls in _NESTED.items()}
        engine = EngineConfig(**_build(EngineConfig, "engine", raw.get("engine", {}), _ENGINE_KEYS),
                              **nested)
        data = DataConfig(**_build(DataConfig, "data", raw.get("data", {})))
        noise = NoiseSpec(**_build(NoiseSpec, "noise", raw.get("noise", {})))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    _validate(engine, data)
    return RunConfig(engine, data, noise)


def _validate(e: EngineConfig, d: DataConfig) -> None:
    checks = [
        (e.population_size >= 1, "engine.population_size must be >= 1"),
        (e.max_evaluations >= 1, "engine.max_evaluations must be >= 1"),
        (e.epoch_eval_cost >= 1, "engine.epoch_eval_cost must be >= 1"),
        (0 <= e.init_depth[0] <= e.init_depth[1], "engine.init_depth must be [min, max] with 0 <= min <= max"),
        (e.max_nodes >= 1 and e.max_depth >= 0, "engine caps must be positive"),
        (e.train.epochs >= 1, "train.epochs must be >= 1"),
        (e.train.batches_per_epoch >= 1, "train.batches_per_epoch must be >= 1"),
        (e.train.batch_size is None or e.train.batch_size >= 2, "train.batch_size must be >= 2"),
        (0 <= e.genetic.crossover_rate <= 1, "genetic.crossover_rate must be in [0, 1]"),
        (0 <= e.genetic.mutation_rate <= 1, "genetic.mutation_rate must be in [0, 1]"),
        (e.genetic.tournament_size >= 1, "genetic.tournament_size must be >= 1"),
        (e.genetic.generations_per_iteration >= 0, "genetic.generations_per_iteration must be >= 0"),
        (0 <= e.genetic.mutate_depth[0] <= e.genetic.mutate_depth[1], "genetic.mutate_depth must be [min, max]"),
        (0 < d.train_fraction <= 1, "data.train_fraction must be in (0, 1]"),
        (d.points >= 2, "data.points must be >= 2"),
    ]
    for ok, msg in checks:
        if not ok:
            raise ConfigError(msg)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"no such config file: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw)
