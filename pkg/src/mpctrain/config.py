"""Experiment configuration: a versioned JSON document with a strict schema.

Every section is optional and falls back to the defaults below; unknown keys
anywhere are rejected so that a typo cannot silently change an experiment.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import ConfigError

SCHEMA_VERSION = 1


@dataclass
class NetworkSpec:
    architecture: str = "residual_mlp"  # residual_mlp | linear_residual | residual_stack
    blocks: int = 15
    width: int = 10
    residual_scale: float | None = None
    path: str | None = None


@dataclass
class DatasetSpec:
    kind: str = "trig"  # trig | linear
    samples: int = 10000
    noise_std: float = 0.03
    whiten: bool = False
    path: str | None = None


@dataclass
class TrainSpec:
    algorithm: str = "mpc"
    horizon: int | None = None
    stages: int = 5
    learning_rate: float = 0.01
    batch_size: int = 100
    epochs: int = 40
    lr_decay: float = 0.9


@dataclass
class SweepSpec:
    horizons: list[int] | None = None
    checkpoints: list[int] = field(default_factory=lambda: [0])
    eval_samples: int = 1000


@dataclass
class MemorySpec:
    mode: str | None = None  # eager | static | None for both
    horizons: list[int] | None = None
    fixed_overhead: float = 0.0


@dataclass
class PlantedSpec:
    T: int = 15
    k: float = 0.5
    a: float = 10.0
    b: float = 10.0


@dataclass
class SelectionSpec:
    horizons: list[int] | None = None
    batches: int = 4
    objective: str = "weighted"  # weighted | accuracy_constraint
    lam: float = 0.5
    epsilon: float = 0.1
    cost: str = "linear"
    unit_cost: float = 1.0
    node_memory: float | None = None
    node_memory_fraction: float | None = None
    memory_mode: str = "eager"
    planted: PlantedSpec | None = None


@dataclass
class EvaluateSpec:
    algorithms: list[str] = field(default_factory=lambda: ["mpc:1", "mpc:half", "mpc:T", "loco:5", "selected"])
    tau: int | None = None


@dataclass
class TheorySpec:
    n: int = 8
    T: int = 100
    c: float = 1.0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    alphas: list[float] = field(default_factory=lambda: [0.70, 0.75, 0.80, 0.85, 0.90, 0.95])
    ensemble: str = "iid"
    slope_window: list[float] = field(default_factory=lambda: [2.0, 4.0])
    lemma_chains: int = 20
    lemma_T: int = 64
    lemma_samples: int = 100


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    command: str | None = None
    seed: int = 0
    network: NetworkSpec = field(default_factory=NetworkSpec)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    sweep: SweepSpec = field(default_factory=SweepSpec)
    memory: MemorySpec = field(default_factory=MemorySpec)
    selection: SelectionSpec = field(default_factory=SelectionSpec)
    evaluate: EvaluateSpec = field(default_factory=EvaluateSpec)
    theory: TheorySpec = field(default_factory=TheorySpec)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _dataclass_of(tp):
    """The dataclass inside ``tp`` or ``Optional[tp]``, if any."""
    if dataclasses.is_dataclass(tp):
        return tp
    for arg in typing.get_args(tp):
        if dataclasses.is_dataclass(arg):
            return arg
    return None


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(doc).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        sub = _dataclass_of(hints[key])
        path = f"{where}.{key}" if where else key
        if sub is not None and value is not None:
            kwargs[key] = _build(sub, value, path)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(doc: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, doc, "")
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg.schema_version}; expected {SCHEMA_VERSION}")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(doc)
