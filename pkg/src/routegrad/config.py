"""Run configuration: a nested YAML document mapped onto dataclasses."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .gradrouter import MODES, RoutingSpec
from .netgraph import ConfigError, NetworkGraph, build_network
from .presets import DEFAULT_ROUTING, PRESETS, get_preset


@dataclass
class OptimizerConfig:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0002


@dataclass
class ScheduleConfig:
    kind: str = "plateau"
    drop_factor: float = 10.0
    patience: int = 3
    min_delta: float = 0.001
    milestones: list[int] = field(default_factory=list)


@dataclass
class DataConfig:
    format: str = "idx"
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    train_files: list[str] = field(default_factory=list)  # cifar binary batches
    test_files: list[str] = field(default_factory=list)
    limit_train: int | None = None
    limit_test: int | None = None
    mean_subtract: bool = True


@dataclass
class AugmentConfig:
    hflip: float = 0.0
    crop_pad: int = 0


_SECTIONS = {"optimizer": OptimizerConfig, "schedule": ScheduleConfig,
             "data": DataConfig, "augment": AugmentConfig}


@dataclass
class RunConfig:
    seed: int
    arch: Any = "convnet5"
    mode: str = "relay"
    routing: dict[str, int] | None = None
    allow_uncovered: bool = False
    sampler: str = "shuffle"
    dtype: str = "float32"
    batch_size: int = 64
    epochs: int = 10
    iterations: int | None = None
    eval_every: int | None = None
    telemetry_stride: int = 100
    checkpoint: str = "model.ckpt"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown backward mode {self.mode!r}; expected one of {MODES}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.sampler not in ("shuffle", "class_aware"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if isinstance(self.arch, str) and self.arch not in PRESETS:
            raise ConfigError(f"unknown architecture preset {self.arch!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    # --- serialization -------------------------------------------------

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = copy.deepcopy(dict(doc or {}))
        if doc.get("seed") is None:
            raise ConfigError("seed is mandatory")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for key, section in _SECTIONS.items():
            sub = doc.get(key) or {}
            sub_known = {f.name for f in fields(section)}
            bad = sorted(set(sub) - sub_known)
            if bad:
                raise ConfigError(f"unknown keys in {key}: {bad}")
            doc[key] = section(**sub)
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "RunConfig":
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(doc)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        cfg = cls.from_yaml(path.read_text(encoding="utf-8"))
        cfg.data = _resolve_paths(cfg.data, path.parent)
        return cfg

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml(), encoding="utf-8")

    # --- derived objects -----------------------------------------------

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    def arch_spec(self) -> dict:
        return get_preset(self.arch) if isinstance(self.arch, str) else copy.deepcopy(self.arch)

    def build_graph(self) -> NetworkGraph:
        return build_network(self.arch_spec(), seed=self.seed, dtype=self.np_dtype)

    def relay_lows(self) -> dict[str, int]:
        if self.routing is not None:
            return dict(self.routing)
        if isinstance(self.arch, str):
            return dict(DEFAULT_ROUTING[self.arch])
        raise ConfigError("relay routing must be given for an inline architecture")

    def routing_spec(self, graph: NetworkGraph, mode: str | None = None) -> RoutingSpec:
        """Routing implied by ``mode`` (default: the configured mode)."""
        mode = mode or self.mode
        if mode == "standard":
            return RoutingSpec.standard(graph)
        if mode == "multiloss_standard":
            return RoutingSpec.multiloss(graph)
        lows = self.relay_lows()
        unknown = sorted(set(lows) - {h.head_id for h in graph.heads})
        if unknown:
            raise ConfigError(f"routing names unknown heads {unknown}")
        return RoutingSpec.from_graph(graph, lows=lows, heads=list(lows),
                                      allow_uncovered=self.allow_uncovered)


def _resolve_paths(data: DataConfig, base: Path) -> DataConfig:
    def fix(p):
        if p is None:
            return None
        q = Path(p).expanduser()
        return str(q if q.is_absolute() else (base.resolve() / q))

    data = copy.deepcopy(data)
    for name in ("train_images", "train_labels", "test_images", "test_labels"):
        setattr(data, name, fix(getattr(data, name)))
    data.train_files = [fix(p) for p in data.train_files]
    data.test_files = [fix(p) for p in data.test_files]
    return data


def mnist_data(directory) -> DataConfig:
    d = Path(directory)
    return DataConfig(
        format="idx",
        train_images=str(d / "train-images-idx3-ubyte"),
        train_labels=str(d / "train-labels-idx1-ubyte"),
        test_images=str(d / "t10k-images-idx3-ubyte"),
        test_labels=str(d / "t10k-labels-idx1-ubyte"),
    )
