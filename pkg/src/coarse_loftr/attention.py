"""Linear-attention transformer over coarse feature tokens.

Two interchangeable attention kernels are provided.  ``linear_attention_reference``
builds the full N x M similarity matrix and exists as a test oracle;
``linear_attention_fast`` never forms it and is assembled from reshapes,
batched matrix products and a sequence sum only, so that it lowers to
runtimes without an einsum primitive.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .backbone import FeatureGrid
from .errors import ConfigError, DimensionError
from .layers import LayerNorm, Linear, Module
from .numerics import Tensor

__all__ = [
    "AttentionConfig",
    "REDUCED_ATTENTION",
    "TransformedFeatures",
    "phi",
    "linear_attention_reference",
    "linear_attention_fast",
    "positional_encoding",
    "EncoderLayer",
    "LoFTRModule",
    "encoder_layer",
    "loftr_module",
]

Z_FLOOR = 1e-9


@dataclass(frozen=True)
class AttentionConfig:
    d_model: int = 32
    n_heads: int = 1
    ffn_dim: int = 32
    layer_pattern: tuple[str, ...] = ("self", "cross", "self", "cross")

    def validate(self, allow_empty: bool = False) -> None:
        if self.d_model < 1 or self.n_heads < 1 or self.ffn_dim < 1:
            raise ConfigError(f"attention sizes must be positive: {self}")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 4:
            raise ConfigError(f"d_model {self.d_model} must be divisible by 4 for positional encoding")
        if not self.layer_pattern and not allow_empty:
            raise ConfigError("layer_pattern must not be empty")
        bad = [k for k in self.layer_pattern if k not in ("self", "cross")]
        if bad:
            raise ConfigError(f"unknown layer kinds {bad}; use 'self' or 'cross'")


REDUCED_ATTENTION = AttentionConfig()


@dataclass
class TransformedFeatures:
    featA: Tensor
    featB: Tensor


def phi(x: Tensor) -> Tensor:
    """Positive feature map elu(x) + 1."""
    return nx.elu(x) + 1.0


def _check_qkv(q: Tensor, k: Tensor, v: Tensor) -> None:
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise DimensionError(f"attention expects [heads, N, d] operands, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[0] != k.shape[0] or k.shape[:2] != v.shape[:2] or q.shape[2] != k.shape[2]:
        raise DimensionError(f"attention operand shapes disagree: q{q.shape} k{k.shape} v{v.shape}")


def linear_attention_reference(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """O(N*M) oracle: row-normalised ``phi(q) phi(k)^T`` applied to ``v``."""
    _check_qkv(q, k, v)
    sim = nx.matmul(phi(q), nx.transpose(phi(k), (0, 2, 1)))
    return nx.matmul(sim, v) / nx.sum(sim, dim=-1, keepdims=True)


def linear_attention_fast(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """O(N * d^2) linear attention without an N x M intermediate.

    The key/value summary ``KV[h] = sum_s phi(k[h, s]) outer v[h, s]`` is formed
    as one batched product of column and row vectors followed by a sum over
    the sequence axis.
    """
    _check_qkv(q, k, v)
    heads, m, dk = k.shape
    dv = v.shape[2]
    fq, fk = phi(q), phi(k)
    col = nx.reshape(fk, (heads * m, dk, 1))
    row = nx.reshape(v, (heads * m, 1, dv))
    kv = nx.bmm(col, row)
    kv = nx.sum(nx.reshape(kv, (heads, m, dk, dv)), dim=1)
    k_sum = nx.reshape(nx.sum(fk, dim=1), (heads, dk, 1))
    z = nx.clamp(nx.bmm(fq, k_sum), Z_FLOOR, None)
    return nx.bmm(fq, kv) / z


def positional_encoding(h: int, w: int, d_model: int, dtype=np.float64) -> Tensor:
    """Parameter-free 2-D sinusoidal encoding, shape ``[h*w, d_model]``.

    Channel quarters hold sin(x*f), cos(x*f), sin(y*f), cos(y*f) with
    ``f_k = 10000^(-k / (d_model/4))``; x is the column and y the row index.
    """
    if d_model % 4:
        raise ConfigError(f"d_model {d_model} must be divisible by 4")
    q = d_model // 4
    freqs = np.exp(-np.log(10000.0) * np.arange(q) / q)
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    xf = xs.reshape(-1, 1) * freqs
    yf = ys.reshape(-1, 1) * freqs
    return Tensor(np.concatenate([np.sin(xf), np.cos(xf), np.sin(yf), np.cos(yf)], axis=1), dtype=dtype)


class EncoderLayer(Module):
    """One attention layer: projections, linear attention, merge, FFN, residual."""

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.q = self.add_module("q", Linear(d, d, rng, dtype))
        self.k = self.add_module("k", Linear(d, d, rng, dtype))
        self.v = self.add_module("v", Linear(d, d, rng, dtype))
        self.merge = self.add_module("merge", Linear(2 * d, d, rng, dtype))
        self.norm1 = self.add_module("norm1", LayerNorm(d, dtype))
        self.ffn1 = self.add_module("ffn1", Linear(2 * d, cfg.ffn_dim, rng, dtype))
        self.ffn2 = self.add_module("ffn2", Linear(cfg.ffn_dim, d, rng, dtype))
        self.norm2 = self.add_module("norm2", LayerNorm(d, dtype))

    def _split(self, x: Tensor) -> Tensor:
        n, d = x.shape
        return nx.transpose(nx.reshape(x, (n, self.n_heads, d // self.n_heads)), (1, 0, 2))

    def __call__(self, x: Tensor, source: Tensor, attention=linear_attention_fast) -> Tensor:
        if x.ndim != 2 or source.ndim != 2 or x.shape[1] != source.shape[1]:
            raise DimensionError(f"encoder layer: x {x.shape} and source {source.shape} disagree")
        n, d = x.shape
        message = attention(self._split(self.q(x)), self._split(self.k(source)), self._split(self.v(source)))
        message = nx.reshape(nx.transpose(message, (1, 0, 2)), (n, d))
        merged = self.norm1(self.merge(nx.concat([x, message], axis=1)))
        hidden = nx.relu(self.ffn1(nx.concat([x, merged], axis=1)))
        return x + self.norm2(self.ffn2(hidden))


def encoder_layer(x: Tensor, source: Tensor, layer: EncoderLayer) -> Tensor:
    return layer(x, source)


class LoFTRModule(Module):
    """Interleaved self/cross attention over both images' token sequences.

    Cross layers use the same weights for the A-from-B and B-from-A updates,
    which makes the module exactly symmetric under swapping its inputs.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        cfg.validate(allow_empty=True)
        self.cfg = cfg
        self.layers = [self.add_module(f"layer{i}", EncoderLayer(cfg, rng, dtype)) for i in range(len(cfg.layer_pattern))]

    def __call__(self, gridA: FeatureGrid, gridB: FeatureGrid, attention=linear_attention_fast) -> TransformedFeatures:
        d = self.cfg.d_model
        if gridA.dim != d or gridB.dim != d:
            raise DimensionError(f"feature dims {gridA.dim}/{gridB.dim} differ from d_model {d}")
        dtype = gridA.values.dtype
        a = gridA.values + positional_encoding(gridA.height, gridA.width, d, dtype)
        b = gridB.values + positional_encoding(gridB.height, gridB.width, d, dtype)
        for kind, layer in zip(self.cfg.layer_pattern, self.layers):
            if kind == "self":
                a, b = layer(a, a, attention), layer(b, b, attention)
            else:
                a, b = layer(a, b, attention), layer(b, a, attention)
        return TransformedFeatures(a, b)


def loftr_module(gridA: FeatureGrid, gridB: FeatureGrid, module: LoFTRModule) -> TransformedFeatures:
    return module(gridA, gridB)
