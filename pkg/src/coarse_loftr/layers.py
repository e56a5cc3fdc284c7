"""Parameter containers built on :mod:`coarse_loftr.numerics`."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import numerics as nx
from .errors import ContractError
from .numerics import Tensor


class Module:
    """Owns named parameters and child modules, in registration order.

    Fully qualified names join attribute names with dots, so a weight
    registered as ``w`` on a child ``conv1`` of ``block0`` is reported as
    ``block0.conv1.w``.
    """

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        p = Tensor(value, requires_grad=True, name=name)
        self._params[name] = p
        return p

    def add_module(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def state_dict(self, prefix: str = "") -> dict[str, Tensor]:
        return dict(self.named_parameters(prefix))

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def requires_grad_(self, flag: bool) -> "Module":
        for p in self.parameters():
            p.requires_grad = flag
            p.grad = np.zeros_like(p.data) if flag else None
        return self

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        """Copy arrays into parameters; names and shapes must agree exactly."""
        own = self.state_dict(prefix)
        missing = sorted(set(own) - set(arrays))
        extra = sorted(set(arrays) - set(own))
        bad = sorted(k for k in own.keys() & arrays.keys() if own[k].shape != tuple(np.shape(arrays[k])))
        if missing or extra or bad:
            parts = []
            if missing:
                parts.append(f"missing: {', '.join(missing)}")
            if extra:
                parts.append(f"unexpected: {', '.join(extra)}")
            if bad:
                parts.append(
                    "shape mismatch: "
                    + ", ".join(f"{k} {own[k].shape} vs {tuple(np.shape(arrays[k]))}" for k in bad)
                )
            raise ContractError("cannot load weights; " + "; ".join(parts))
        for k, p in own.items():
            p.data = np.array(arrays[k], dtype=p.dtype, copy=True)
            if p.requires_grad:
                p.grad = np.zeros_like(p.data)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            if p.grad is not None:
                p.grad = np.zeros_like(p.data)
        return self


def param_count(module: Module | None) -> int:
    """Exact number of learnable scalars."""
    if module is None:
        return 0
    return int(sum(p.size for p in module.parameters()))


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def xavier_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    """Bias-free convolution; the following normalisation supplies the offset."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.stride = stride
        self.pad = kernel // 2
        self.w = self.add_param("w", he_uniform(rng, (c_out, c_in, kernel, kernel), c_in * kernel * kernel, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.conv2d(x, self.w, self.stride, self.pad)


class GroupNorm(Module):
    def __init__(self, channels: int, max_groups: int = 8, dtype=np.float64):
        super().__init__()
        self.groups = math.gcd(max_groups, channels)
        self.w = self.add_param("w", np.ones(channels, dtype=dtype))
        self.b = self.add_param("b", np.zeros(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.group_norm(x, self.groups, self.w, self.b)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.w = self.add_param("w", xavier_uniform(rng, (d_in, d_out), d_in, d_out, dtype))
        self.b = self.add_param("b", np.zeros(d_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.matmul(x, self.w) + self.b


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64):
        super().__init__()
        self.w = self.add_param("w", np.ones(dim, dtype=dtype))
        self.b = self.add_param("b", np.zeros(dim, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.w, self.b)
