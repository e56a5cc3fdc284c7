"""Soft-target distillation loss, ground-truth cross-entropy and their blend."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, DimensionError
from .numerics import Tensor

__all__ = ["DistillConfig", "LossBreakdown", "soften", "kl_distill_loss", "target_loss", "total_loss"]

P_FLOOR = 1e-12


@dataclass(frozen=True)
class DistillConfig:
    """Temperature and weights of the combined loss ``c_d * L_distill + c_t * L_target``.

    The source states both weights as 0.3 and 0.7 without an unambiguous
    assignment; reading order gives c_d = 0.3, c_t = 0.7.  Swap them here if
    the distillation term should dominate.
    """

    t: float = 5.0
    c_d: float = 0.3
    c_t: float = 0.7

    def validate(self) -> None:
        if self.t <= 0:
            raise ConfigError(f"distillation temperature must be positive, got {self.t}")
        if self.c_d < 0 or self.c_t < 0 or self.c_d + self.c_t <= 0:
            raise ConfigError(f"loss weights must be non-negative with positive sum: c_d={self.c_d}, c_t={self.c_t}")


@dataclass
class LossBreakdown:
    l_distill: Tensor | float
    l_target: Tensor | float
    total: Tensor | float

    def values(self) -> tuple[float, float, float]:
        f = lambda x: x.item() if isinstance(x, Tensor) else float(x)  # noqa: E731
        return f(self.l_distill), f(self.l_target), f(self.total)


def soften(S, t: float) -> Tensor:
    """Log-softmax of S/t over all entries of the flattened score matrix."""
    if t <= 0:
        raise ConfigError(f"temperature must be positive, got {t}")
    S = S if isinstance(S, Tensor) else Tensor(S)
    return nx.log_softmax(nx.reshape(S, (-1,)) / t, dim=0)


def kl_distill_loss(S_student: Tensor, S_teacher, t: float = 5.0) -> Tensor:
    """t^2 * KL(teacher || student) between the softened score distributions.

    The teacher scores are used as constants; no gradient flows into them.
    """
    teacher = S_teacher.data if isinstance(S_teacher, Tensor) else np.asarray(S_teacher)
    if tuple(teacher.shape) != tuple(S_student.shape):
        raise DimensionError(f"kl_distill_loss: student {S_student.shape} vs teacher {teacher.shape}")
    with nx.no_grad():
        log_q = soften(Tensor(teacher, dtype=S_student.dtype), t).data
    log_p = soften(S_student, t)
    q = np.exp(log_q)
    return nx.sum(Tensor(q) * (Tensor(log_q) - log_p)) * (t * t)


def target_loss(P: Tensor, pairs) -> Tensor:
    """Mean negative log match probability over ground-truth pairs.

    ``pairs`` is a sequence of (cellA, cellB) or an ``[k, 2]`` integer array.
    """
    idx = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    if len(idx) == 0:
        raise ContractError("target_loss needs at least one ground-truth match; filter empty pairs upstream")
    picked = nx.take(P, (idx[:, 0], idx[:, 1]))
    return -nx.mean(nx.log(nx.clamp(picked, P_FLOOR, 1.0)))


def total_loss(l_distill, l_target, cfg: DistillConfig = DistillConfig()) -> LossBreakdown:
    total = l_distill * cfg.c_d + l_target * cfg.c_t
    return LossBreakdown(l_distill, l_target, total)
