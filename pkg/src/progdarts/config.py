"""Experiment configuration: strict YAML loading into frozen dataclasses."""

from __future__ import annotations

import dataclasses
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .data import (
    Dataset,
    DataError,
    SplitSpec,
    SynthSpec,
    load_cifar10_binary,
    split_dataset,
    synth_dataset_generate,
)
from .evaluate import TrainConfig
from .search import BilevelConfig, SearchConfig, SearchConfigError, StageSchedule, make_space
from .supernet import SupernetConfig

OUT_ENV = "PROGDARTS_OUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScheduleSection:
    epochs: int = 30
    epochs_per_stage: int = 2
    stages: int = 2


@dataclass(frozen=True)
class NetSection:
    cells: int = 3
    channels: int = 8
    nodes: int = 4
    stem_multiplier: int = 3


@dataclass(frozen=True)
class DatasetSection:
    kind: str = "synthetic"
    n: int = 512
    test_fraction: float = 0.25
    classes: int = 4
    side: int = 8
    noise: float = 0.3
    seed: int = 0
    path: Optional[str] = None
    split_fraction: float = 0.5
    split_seed: int = 0


@dataclass(frozen=True)
class EvaluateSection:
    cells: int = 3
    channels: int = 8
    epochs: int = 10
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 3e-4
    batch_size: int = 32


@dataclass(frozen=True)
class ExperimentConfig:
    space: str = "S2"
    mode: str = "opp"
    seeds: tuple = (0,)
    output_dir: Optional[str] = None
    dtype: str = "float64"
    workers: int = 1
    schedule: ScheduleSection = ScheduleSection()
    bilevel: BilevelConfig = BilevelConfig(batch_size=32)
    supernet: NetSection = NetSection()
    dataset: DatasetSection = DatasetSection()
    evaluate: EvaluateSection = EvaluateSection()

    def validate(self) -> "ExperimentConfig":
        try:
            universe = make_space(self.space)
        except SearchConfigError as exc:
            raise ConfigError(f"space: {exc}") from None
        if self.mode not in ("opp", "darts"):
            raise ConfigError(f"mode: expected 'opp' or 'darts', got {self.mode!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype: expected 'float32' or 'float64', got {self.dtype!r}")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        s = self.schedule
        try:
            StageSchedule(s.epochs, s.epochs_per_stage, s.stages)
        except SearchConfigError as exc:
            raise ConfigError(str(exc)) from None
        if self.mode == "opp":
            if s.stages < 2:
                raise ConfigError(f"schedule.stages: opp search needs >= 2 stages, got {s.stages}")
            if s.stages > len(universe):
                raise ConfigError(
                    f"schedule.stages: {s.stages} stages exceed the {len(universe)} "
                    f"operations of space {self.space}")
        d = self.dataset
        if d.kind not in ("synthetic", "cifar10"):
            raise ConfigError(f"dataset.kind: expected 'synthetic' or 'cifar10', got {d.kind!r}")
        if d.kind == "cifar10" and not d.path:
            raise ConfigError("dataset.path: required for cifar10")
        if not 0.0 < d.test_fraction < 1.0:
            raise ConfigError("dataset.test_fraction: must lie in (0, 1)")
        if not 0.0 < d.split_fraction < 1.0:
            raise ConfigError("dataset.split_fraction: must lie in (0, 1)")
        for name in ("cells", "channels", "nodes", "stem_multiplier"):
            if getattr(self.supernet, name) < 1:
                raise ConfigError(f"supernet.{name}: must be >= 1")
        if self.supernet.channels % 2 or self.evaluate.channels % 2:
            raise ConfigError("supernet.channels / evaluate.channels: must be even (factorized reduce)")
        return self

    # -- derived configs ----------------------------------------------------

    def num_classes(self) -> int:
        return 10 if self.dataset.kind == "cifar10" else self.dataset.classes

    def search_config(self, seed: int) -> SearchConfig:
        s, n = self.schedule, self.supernet
        return SearchConfig(
            space=self.space,
            schedule=StageSchedule(s.epochs, s.epochs_per_stage, s.stages),
            bilevel=self.bilevel,
            supernet=SupernetConfig(cells=n.cells, channels=n.channels, nodes=n.nodes,
                                    stem_multiplier=n.stem_multiplier, num_classes=self.num_classes()),
            seed=int(seed),
            dtype=self.dtype,
        )

    def eval_net_config(self) -> SupernetConfig:
        e = self.evaluate
        return SupernetConfig(cells=e.cells, channels=e.channels, nodes=self.supernet.nodes,
                              stem_multiplier=self.supernet.stem_multiplier,
                              num_classes=self.num_classes())

    def train_config(self) -> TrainConfig:
        e = self.evaluate
        return TrainConfig(epochs=e.epochs, lr=e.lr, momentum=e.momentum,
                           weight_decay=e.weight_decay, batch_size=e.batch_size)

    def resolve_output_dir(self, override: Optional[str] = None) -> Path:
        return Path(override or self.output_dir or os.environ.get(OUT_ENV) or "runs")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["seeds"] = list(self.seeds)
        return d


# ---------------------------------------------------------------------------
# strict conversion
# ---------------------------------------------------------------------------


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return _from_dict(tp, value, where)
    if tp is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        for i, v in enumerate(value):
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{where}[{i}]: expected an integer, got {v!r}")
        return tuple(value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported field type {tp!r}")


def _from_dict(cls, data, where: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        loc = f"{where}." if where else ""
        raise ConfigError(f"unknown key(s) {', '.join(loc + u for u in unknown)}")
    kwargs = {}
    for name, value in data.items():
        kwargs[name] = _convert(hints[name], value, f"{where}.{name}" if where else name)
    try:
        return cls(**kwargs)
    except (SearchConfigError, DataError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def config_from_dict(data: dict) -> ExperimentConfig:
    return _from_dict(ExperimentConfig, data).validate()


def load_config(path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data or {})


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# ---------------------------------------------------------------------------
# data preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    train: Dataset  # full training set, standardized
    test: Dataset  # standardized with the training statistics
    search_train: Dataset  # w-updates
    search_val: Dataset  # alpha-updates


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    d = cfg.dataset
    if d.kind == "cifar10":
        root = Path(d.path)
        train = load_cifar10_binary(root, standardize=False)
        test = load_cifar10_binary([root / "test_batch.bin"], standardize=False)
    else:
        full = synth_dataset_generate(SynthSpec(n=d.n, classes=d.classes, side=d.side,
                                                seed=d.seed, noise=d.noise))
        n_test = max(1, int(round(d.n * d.test_fraction)))
        idx = np.random.default_rng([d.seed, 7]).permutation(d.n)
        test = full.subset(np.sort(idx[:n_test]), full.name + ":test")
        train = full.subset(np.sort(idx[n_test:]), full.name + ":train")
    train = train.standardized()
    test = test.standardized(train.mean, train.std)
    st, sv = split_dataset(train, SplitSpec(d.split_fraction, d.split_seed))
    return PreparedData(train, test, st, sv)
