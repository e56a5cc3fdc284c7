"""Timing helpers for the inference pipeline and the two attention kernels."""
from __future__ import annotations

import time

import numpy as np

from . import numerics as nx
from .attention import linear_attention_fast, linear_attention_reference
from .numerics import Tensor

__all__ = ["time_pipeline", "attention_speedup", "REPORTED_FPS", "REPORTED_PARAMS_REDUCED"]

# Reported figures, printed for comparison only.
REPORTED_FPS = {"Jetson Nano 2GB": 5.0, "GTX 1060 6GB": 45.0}
REPORTED_PARAMS_REDUCED = 2_257_022


def _median_ms(fn, iters: int) -> float:
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def time_pipeline(model, height: int, width: int, iters: int = 5, seed: int = 0) -> float:
    """Median milliseconds per image pair for a full no-grad forward pass."""
    rng = np.random.default_rng(seed)
    a = rng.random((1, height, width)).astype(model.dtype)
    b = rng.random((1, height, width)).astype(model.dtype)
    with nx.no_grad(), nx.finite_checks(False):
        model(a, b)
        return _median_ms(lambda: model(a, b), iters)


def attention_speedup(n_tokens: int = 1200, d_model: int = 32, n_heads: int = 1, iters: int = 5, seed: int = 0):
    """(reference_ms, fast_ms) for one attention call over ``n_tokens`` tokens."""
    rng = np.random.default_rng(seed)
    shape = (n_heads, n_tokens, d_model // n_heads)
    q, k, v = (Tensor(rng.standard_normal(shape)) for _ in range(3))
    with nx.no_grad(), nx.finite_checks(False):
        linear_attention_fast(q, k, v)
        fast = _median_ms(lambda: linear_attention_fast(q, k, v), iters)
        ref = _median_ms(lambda: linear_attention_reference(q, k, v), iters)
    return ref, fast
