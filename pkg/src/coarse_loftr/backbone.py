"""Residual convolutional head producing the coarse 1/16 feature grid.

Layer names (relative to the ``backbone.`` prefix used in weight files)::

    stem.w, stem_norm.{w,b}
    stage{i}.block{j}.conv{k}.w           i = 1..S, j = 1..2, k = 1..2
    stage{i}.block{j}.norm{k}.{w,b}
    stage{i}.block1.down.w                1x1 shortcut, present on the stride-2 block
    stage{i}.block1.down_norm.{w,b}
    proj.w                                1x1 projection to d_model
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError, DimensionError
from .layers import Conv2d, GroupNorm, Module, param_count
from .numerics import Tensor

__all__ = [
    "BackboneConfig",
    "REDUCED_BACKBONE",
    "FeatureGrid",
    "Backbone",
    "build_backbone",
    "extract_features",
    "param_count",
]

COARSE_STRIDE = 16


@dataclass(frozen=True)
class BackboneConfig:
    initial_dim: int = 8
    block_dims: tuple[int, ...] = (8, 16, 32, 32)
    d_model: int = 32
    output_stride: int = COARSE_STRIDE

    def validate(self) -> None:
        if self.initial_dim < 1 or self.d_model < 1 or any(c < 1 for c in self.block_dims):
            raise ConfigError(f"channel counts must be positive: {self}")
        if not self.block_dims:
            raise ConfigError("block_dims must name at least one stage")
        if self.output_stride != 2 ** len(self.block_dims):
            raise ConfigError(
                f"output_stride {self.output_stride} inconsistent with {len(self.block_dims)} "
                f"stride-2 stages (gives {2 ** len(self.block_dims)})"
            )
        if self.output_stride != COARSE_STRIDE:
            raise ConfigError(f"coarse matching needs output_stride {COARSE_STRIDE}, got {self.output_stride}")


REDUCED_BACKBONE = BackboneConfig()


@dataclass
class FeatureGrid:
    """Flattened row-major grid of coarse feature vectors, one token per cell."""

    height: int
    width: int
    values: Tensor = field(repr=False)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n(self) -> int:
        return self.height * self.width


class ResidualBlock(Module):
    def __init__(self, c_in: int, c_out: int, stride: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.conv1 = self.add_module("conv1", Conv2d(c_in, c_out, 3, stride, rng, dtype))
        self.norm1 = self.add_module("norm1", GroupNorm(c_out, dtype=dtype))
        self.conv2 = self.add_module("conv2", Conv2d(c_out, c_out, 3, 1, rng, dtype))
        self.norm2 = self.add_module("norm2", GroupNorm(c_out, dtype=dtype))
        self.down = self.down_norm = None
        if stride != 1 or c_in != c_out:
            self.down = self.add_module("down", Conv2d(c_in, c_out, 1, stride, rng, dtype))
            self.down_norm = self.add_module("down_norm", GroupNorm(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        y = nx.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        shortcut = x if self.down is None else self.down_norm(self.down(x))
        return nx.relu(y + shortcut)


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.stem = self.add_module("stem", Conv2d(1, cfg.initial_dim, 3, 1, rng, dtype))
        self.stem_norm = self.add_module("stem_norm", GroupNorm(cfg.initial_dim, dtype=dtype))
        self.stages = []
        c_in = cfg.initial_dim
        for i, c in enumerate(cfg.block_dims, start=1):
            stage = Module()
            stage.add_module("block1", ResidualBlock(c_in, c, 2, rng, dtype))
            stage.add_module("block2", ResidualBlock(c, c, 1, rng, dtype))
            self.stages.append(self.add_module(f"stage{i}", stage))
            c_in = c
        self.proj = self.add_module("proj", Conv2d(c_in, cfg.d_model, 1, 1, rng, dtype))

    def __call__(self, images: Tensor) -> Tensor:
        """Map ``images[b, 1, h, w]`` to coarse features ``[b, d_model, h/16, w/16]``."""
        if images.ndim != 4 or images.shape[1] != 1:
            raise DimensionError(f"backbone expects [b, 1, h, w] images, got {images.shape}")
        h, w = images.shape[2:]
        s = self.cfg.output_stride
        if h % s or w % s:
            raise DimensionError(
                f"image size {h}x{w} is not a multiple of {s}; pad or crop to "
                f"{(h // s) * s}x{(w // s) * s} or {-(-h // s) * s}x{-(-w // s) * s}"
            )
        x = nx.relu(self.stem_norm(self.stem(images)))
        for stage in self.stages:
            for block in stage._children.values():
                x = block(x)
        return self.proj(x)


def build_backbone(cfg: BackboneConfig = REDUCED_BACKBONE, seed: int = 0, dtype=np.float64) -> Backbone:
    """Deterministically initialised backbone (He-uniform convolutions)."""
    return Backbone(cfg, np.random.default_rng(seed), dtype)


def to_grids(features: Tensor) -> list[FeatureGrid]:
    """Split ``[b, d, h, w]`` backbone output into per-image token grids."""
    b, d, h, w = features.shape
    flat = nx.transpose(nx.reshape(features, (b, d, h * w)), (0, 2, 1))
    return [FeatureGrid(h, w, flat[i]) for i in range(b)]


def extract_features(backbone: Backbone, image) -> FeatureGrid:
    """Coarse feature grid of a single ``[1, h, w]`` image."""
    image = image if isinstance(image, Tensor) else Tensor(image, dtype=backbone.stem.w.dtype)
    if image.ndim != 3 or image.shape[0] != 1:
        raise DimensionError(f"expected a [1, h, w] image, got {image.shape}")
    return to_grids(backbone(nx.reshape(image, (1,) + image.shape)))[0]
