"""Flat ``key = value`` run configuration covering every tunable of a run."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints

from .attention import AttentionConfig
from .backbone import BackboneConfig
from .distillation import DistillConfig
from .errors import ConfigError
from .matching import DEFAULT_TAU, DEFAULT_THRESHOLD
from .model import ModelConfig
from .trainer import TrainConfig

__all__ = ["RunConfig", "parse_config", "load_config", "format_config", "TEACHER_RUN"]


@dataclass(frozen=True)
class RunConfig:
    # backbone
    initial_dim: int = 8
    block_dims: tuple[int, ...] = (8, 16, 32, 32)
    # attention
    d_model: int = 32
    n_heads: int = 1
    ffn_dim: int = 32
    layer_pattern: tuple[str, ...] = ("self", "cross", "self", "cross")
    # matching
    tau: float = DEFAULT_TAU
    match_threshold: float = DEFAULT_THRESHOLD
    mnn: bool = True
    # distillation
    t: float = 5.0
    c_d: float = 0.3
    c_t: float = 0.7
    # optimisation
    lr0: float = 1e-3
    lr_gamma: float = 1e-3
    lr_step_epochs: int = 15
    micro_batch: int = 4
    accum_steps: int = 8
    epoch_pairs: int = 5000
    epochs: int = 30
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # ground truth
    grid_step: int = 16
    depth_tol: float = 0.02

    def model_config(self) -> ModelConfig:
        cfg = ModelConfig(
            BackboneConfig(self.initial_dim, tuple(self.block_dims), self.d_model),
            AttentionConfig(self.d_model, self.n_heads, self.ffn_dim, tuple(self.layer_pattern)),
            self.tau,
        )
        cfg.validate()
        return cfg

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        cfg = TrainConfig(**{k: getattr(self, k) for k in names})
        cfg.validate()
        return cfg

    def distill_config(self) -> DistillConfig:
        cfg = DistillConfig(self.t, self.c_d, self.c_t)
        cfg.validate()
        return cfg

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_model(cls, model: ModelConfig, **changes) -> "RunConfig":
        b, a = model.backbone, model.attention
        return cls(
            initial_dim=b.initial_dim,
            block_dims=tuple(b.block_dims),
            d_model=a.d_model,
            n_heads=a.n_heads,
            ffn_dim=a.ffn_dim,
            layer_pattern=tuple(a.layer_pattern),
            tau=model.tau,
            **changes,
        )


TEACHER_RUN = RunConfig(
    initial_dim=128,
    block_dims=(128, 196, 256, 256),
    d_model=256,
    n_heads=8,
    ffn_dim=256,
    layer_pattern=("self", "cross") * 4,
    c_d=0.0,
)

_HINTS = get_type_hints(RunConfig)


def _parse_value(key: str, raw: str, lineno: int):
    kind = _HINTS[key]
    try:
        if kind is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind == tuple[int, ...]:
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if kind == tuple[str, ...]:
            return tuple(x.strip() for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"line {lineno}: bad value {raw!r} for {key}") from None
    raise ConfigError(f"line {lineno}: unsupported key type for {key}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(text: str, base: RunConfig = RunConfig()) -> RunConfig:
    """Parse ``key = value`` lines over ``base``; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _HINTS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, lineno)
    return dataclasses.replace(base, **values)


def load_config(path, base: RunConfig = RunConfig()) -> RunConfig:
    try:
        return parse_config(Path(path).read_text(), base)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n" for f in fields(cfg))
