"""Run configuration: a single JSON document with dotted-key overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

from .augment import AugmentConfig
from .model import LoraConfig, ModelConfig

MODES = ("generalist", "specialist", "few_shot")


class RunConfigError(ValueError):
    pass


@dataclass
class OptimizerConfig:
    base_lr: float = 5e-4
    decay: float = 0.85
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 8
    steps: Optional[int] = None
    epochs: Optional[int] = 10


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lora: Optional[LoraConfig] = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    datasets: list[str] = field(default_factory=list)
    val_datasets: list[str] = field(default_factory=list)
    mode: str = "generalist"
    trainable: Optional[str] = None
    base_checkpoint: Optional[str] = None
    few_shot_patients: int = 3
    sigma: float = 2.0
    val_every: int = 1
    seed: int = 0
    output_dir: str = "runs/default"

    def validate(self, check_paths: bool = True) -> "RunConfig":
        if self.mode not in MODES:
            raise RunConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.datasets:
            raise RunConfigError("at least one dataset manifest is required")
        if self.mode in ("specialist", "few_shot") and len(self.datasets) != 1:
            raise RunConfigError(f"{self.mode} mode takes exactly one dataset")
        if self.mode == "specialist" and not self.base_checkpoint:
            raise RunConfigError("specialist mode requires base_checkpoint")
        if self.trainable == "lora_only" and self.lora is None:
            raise RunConfigError("trainable=lora_only needs a lora section")
        opt = self.optimizer
        if opt.batch_size < 1:
            raise RunConfigError("batch_size must be >= 1")
        if opt.steps is None and opt.epochs is None:
            raise RunConfigError("set optimizer.steps or optimizer.epochs")
        if not opt.base_lr > 0:
            raise RunConfigError("base_lr must be positive")
        if check_paths:
            paths = list(self.datasets) + list(self.val_datasets)
            if self.base_checkpoint:
                paths.append(self.base_checkpoint)
            for p in paths:
                if not Path(p).exists():
                    raise FileNotFoundError(p)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        d["lora"] = self.lora.to_dict() if self.lora else None
        d["augment"] = self.augment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise RunConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "model" in d:
                d["model"] = ModelConfig.from_dict(d["model"])
            if d.get("lora") is not None:
                d["lora"] = LoraConfig(**d["lora"])
            if "augment" in d:
                d["augment"] = AugmentConfig(**d["augment"])
            if "optimizer" in d:
                d["optimizer"] = OptimizerConfig(**d["optimizer"])
            return cls(**d)
        except TypeError as exc:
            raise RunConfigError(str(exc)) from exc


def apply_override(d: dict, dotted: str, value: Any) -> None:
    keys = dotted.split(".")
    node = d
    for k in keys[:-1]:
        if node.get(k) is None:
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(path, overrides=()) -> RunConfig:
    """Read a JSON run config; relative paths resolve against the file's folder."""
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"{path}: invalid JSON ({exc})") from exc
    for item in overrides:
        if "=" not in item:
            raise RunConfigError(f"override {item!r} must look like key.path=value")
        key, value = item.split("=", 1)
        apply_override(d, key, parse_value(value))
    base = path.parent

    def resolve(p):
        return str(p if Path(p).is_absolute() else base / p)

    d["datasets"] = [resolve(p) for p in d.get("datasets", [])]
    d["val_datasets"] = [resolve(p) for p in d.get("val_datasets", [])]
    if d.get("base_checkpoint"):
        d["base_checkpoint"] = resolve(d["base_checkpoint"])
    if "output_dir" in d:
        d["output_dir"] = resolve(d["output_dir"])
    return RunConfig.from_dict(d)
