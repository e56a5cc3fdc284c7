"""The complete coarse matcher: backbone, linear-attention module, dual softmax."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import REDUCED_ATTENTION, AttentionConfig, LoFTRModule, linear_attention_fast
from .backbone import REDUCED_BACKBONE, Backbone, BackboneConfig, to_grids
from .errors import ConfigError
from .layers import Module
from .matching import DEFAULT_TAU, dual_softmax, score_matrix
from .numerics import Tensor

__all__ = ["ModelConfig", "REDUCED", "ORIGINAL_DIMS", "CoarseMatcher", "MatchOutput", "build_model"]


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = REDUCED_BACKBONE
    attention: AttentionConfig = REDUCED_ATTENTION
    tau: float = DEFAULT_TAU

    def validate(self) -> None:
        self.backbone.validate()
        self.attention.validate(allow_empty=True)
        if self.backbone.d_model != self.attention.d_model:
            raise ConfigError(
                f"backbone projects to {self.backbone.d_model} channels but attention d_model is {self.attention.d_model}"
            )
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")


REDUCED = ModelConfig()

# Widths of the full-size column (initial 128; stages 128/196/256; d_model 256,
# 8 heads, 8 layers).  A fourth 256-wide stage keeps the coarse grid at 1/16 so
# teacher and student score matrices have the same shape.
ORIGINAL_DIMS = ModelConfig(
    backbone=BackboneConfig(initial_dim=128, block_dims=(128, 196, 256, 256), d_model=256),
    attention=AttentionConfig(d_model=256, n_heads=8, ffn_dim=256, layer_pattern=("self", "cross") * 4),
)


@dataclass
class MatchOutput:
    """Per-pair result; ``featA``/``featB`` are transformer outputs scaled by 1/sqrt(d_model)."""

    S: Tensor
    P: Tensor
    featA: Tensor = field(repr=False)
    featB: Tensor = field(repr=False)
    gridA: tuple[int, int] = (0, 0)
    gridB: tuple[int, int] = (0, 0)


class CoarseMatcher(Module):
    def __init__(self, cfg: ModelConfig = REDUCED, seed: int = 0, dtype=np.float64):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.backbone = self.add_module("backbone", Backbone(cfg.backbone, rng, dtype))
        self.loftr = self.add_module("loftr", LoFTRModule(cfg.attention, rng, dtype))

    @property
    def dtype(self):
        return self.backbone.stem.w.dtype

    def __call__(self, imageA, imageB, attention=linear_attention_fast) -> MatchOutput:
        """Score and probability matrices for one image pair (``[1, h, w]`` each)."""
        a = np.asarray(getattr(imageA, "data", imageA), dtype=self.dtype)
        b = np.asarray(getattr(imageB, "data", imageB), dtype=self.dtype)
        if a.shape == b.shape:
            gridA, gridB = to_grids(self.backbone(Tensor(np.stack([a, b]))))
        else:
            (gridA,), (gridB,) = to_grids(self.backbone(Tensor(a[None]))), to_grids(self.backbone(Tensor(b[None])))
        out = self.loftr(gridA, gridB, attention)
        scale = 1.0 / np.sqrt(self.cfg.attention.d_model)
        featA, featB = out.featA * scale, out.featB * scale
        S = score_matrix(featA, featB, self.cfg.tau)
        return MatchOutput(S, dual_softmax(S), featA, featB, (gridA.height, gridA.width), (gridB.height, gridB.width))


def build_model(cfg: ModelConfig = REDUCED, seed: int = 0, dtype=np.float64) -> CoarseMatcher:
    return CoarseMatcher(cfg, seed, dtype)
