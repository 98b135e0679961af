"""Run configuration: dataset, model, optimisation, and output settings in one JSON file."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .model import ModelConfig, apply_preset
from .tensor import ConfigError
from .training import TrainConfig


@dataclass
class RunConfig:
    manifest: str = ""
    cache_dir: str = ""
    out_dir: str = "runs/default"
    preset: str = "full"
    class_names: list[str] | None = None
    split_seed: int = 0
    train_fraction: float = 0.8
    workers: int = 1
    eval_every: int = 1
    # stop once utterance-level train accuracy reaches this value
    target_train_acc: float | None = None
    acc_as_precision: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def names(self) -> list[str]:
        return list(self.class_names) if self.class_names else [str(i) for i in range(self.model.num_classes)]

    def resolved_model(self) -> ModelConfig:
        return apply_preset(self.model, self.preset)

    def resolved_cache_dir(self) -> Path:
        env = os.environ.get("SER_CACHE_DIR")
        if env:
            return Path(env)
        if self.cache_dir:
            return Path(self.cache_dir)
        return Path(self.out_dir) / "cache"

    def validate(self) -> None:
        if self.class_names is not None and len(self.class_names) != self.model.num_classes:
            raise ConfigError(
                f"{len(self.class_names)} class names for a {self.model.num_classes}-class model"
            )
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in (0, 1]")
        if self.eval_every < 1 or self.workers < 1:
            raise ConfigError("eval_every and workers must be at least 1")
        self.resolved_model().validate()
        try:
            self.train.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            model = ModelConfig.from_dict(d.pop("model", {}))
            train = TrainConfig(**d.pop("train", {}))
            return cls(model=model, train=train, **d)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        cfg = cls.from_dict(d)
        # relative dataset paths are taken relative to the config file
        if cfg.manifest and not Path(cfg.manifest).is_absolute():
            cfg.manifest = str(path.parent / cfg.manifest)
        return cfg

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")
