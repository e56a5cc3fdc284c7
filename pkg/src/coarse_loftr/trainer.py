"""AdamW, step learning-rate schedule, gradient accumulation and the training loop."""
from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .dataio import PairDescriptor, append_metrics, load_pair, save_weights
from .distillation import DistillConfig, LossBreakdown, kl_distill_loss, target_loss, total_loss
from .errors import ConfigError, ContractError, NumericError
from .geometry import DEFAULT_DEPTH_TOL, GroundTruthMatches, generate_ground_truth
from .layers import Module
from .matching import mae
from .numerics import Tensor

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "AdamW",
    "adamw_step",
    "lr_schedule",
    "accumulate_and_step",
    "PairSample",
    "PairDataset",
    "pair_losses",
    "train",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation hyperparameters.

    ``lr_gamma`` defaults to the literal 1e-3 decay factor, which all but stops
    learning after the first decay; 0.1 is the usual choice.
    """

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

    @property
    def virtual_batch(self) -> int:
        return self.micro_batch * self.accum_steps

    def validate(self) -> None:
        if self.micro_batch < 1 or self.accum_steps < 1:
            raise ConfigError(f"micro_batch and accum_steps must be >= 1 ({self.micro_batch}, {self.accum_steps})")
        if self.epoch_pairs < 1 or self.epochs < 0 or self.lr_step_epochs < 1:
            raise ConfigError("epoch_pairs and lr_step_epochs must be >= 1, epochs >= 0")
        if self.lr0 <= 0 or self.lr_gamma <= 0:
            raise ConfigError("lr0 and lr_gamma must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("invalid AdamW constants")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict[str, Tensor], state: OptimizerState, lr: float, cfg: TrainConfig = TrainConfig()) -> None:
    """One AdamW update in place: decoupled decay, then bias-corrected Adam step."""
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name} has no gradient")
        if not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter {name}")
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = p.grad
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data *= 1.0 - lr * cfg.weight_decay
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


class AdamW:
    def __init__(self, params: dict[str, Tensor], cfg: TrainConfig = TrainConfig()):
        self.params = params
        self.cfg = cfg
        self.state = OptimizerState()

    def step(self, lr: float) -> None:
        adamw_step(self.params, self.state, lr, self.cfg)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


def lr_schedule(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    """lr0 * lr_gamma ** floor(epoch / lr_step_epochs)."""
    if epoch < 0:
        raise ContractError(f"epoch must be non-negative, got {epoch}")
    return cfg.lr0 * cfg.lr_gamma ** (epoch // cfg.lr_step_epochs)


def accumulate_and_step(
    optimizer: AdamW,
    micro_batches: Sequence,
    loss_fn: Callable[[object], LossBreakdown | None],
    lr: float,
    n: int | None = None,
) -> LossBreakdown | None:
    """Run ``n`` micro-batches with loss scaled by 1/n, then one optimizer step.

    ``loss_fn`` returns the micro-batch mean loss breakdown, or ``None`` if the
    micro-batch holds nothing usable (it then contributes zero gradient).
    Gradients are zeroed after the step, and also when any micro-batch fails.
    Returns the mean breakdown over contributing micro-batches.
    """
    n = len(micro_batches) if n is None else n
    if len(micro_batches) != n:
        raise ContractError(f"expected {n} micro-batches, got {len(micro_batches)}")
    used = []
    try:
        for mb in micro_batches:
            part = loss_fn(mb)
            if part is None:
                continue
            nx.backward(part.total * (1.0 / n))
            used.append(part.values())
        if used:
            optimizer.step(lr)
    finally:
        optimizer.zero_grad()
    if not used:
        return None
    return LossBreakdown(*np.mean(used, axis=0))


# ---------------------------------------------------------------------------
# data


@dataclass
class PairSample:
    key: str
    imageA: np.ndarray
    imageB: np.ndarray
    gt: GroundTruthMatches


class PairDataset:
    """Lazily loaded dataset pairs with cached images and ground truth."""

    def __init__(self, descriptors: Sequence[PairDescriptor], grid_step: int = 16, depth_tol: float = DEFAULT_DEPTH_TOL):
        self.descriptors = list(descriptors)
        self.grid_step = grid_step
        self.depth_tol = depth_tol
        self._cache: dict[int, PairSample] = {}

    def __len__(self) -> int:
        return len(self.descriptors)

    def __getitem__(self, i: int) -> PairSample:
        if i not in self._cache:
            d = self.descriptors[i]
            sp = load_pair(d)
            gt = generate_ground_truth(sp.depthA, sp.depthB, sp.camA, sp.camB, self.grid_step, self.depth_tol)
            self._cache[i] = PairSample(d.key, sp.imageA, sp.imageB, gt)
        return self._cache[i]


# ---------------------------------------------------------------------------
# training loop


def pair_losses(student, sample: PairSample, distill: DistillConfig, teacher_S: np.ndarray | None):
    """Loss breakdown (tensors) and MAE for one pair; ``None`` if it has no ground truth."""
    if len(sample.gt) == 0:
        log.warning("pair %s has no ground-truth matches; skipped", sample.key)
        return None
    out = student(sample.imageA, sample.imageB)
    l_target = target_loss(out.P, sample.gt.pairs)
    if teacher_S is not None:
        l_distill = kl_distill_loss(out.S, teacher_S, distill.t)
    else:
        l_distill = Tensor(0.0)
    return total_loss(l_distill, l_target, distill), mae(out.P, sample.gt.dense)


def _mean_breakdown(items: list[LossBreakdown]) -> LossBreakdown:
    def avg(attr):
        acc = getattr(items[0], attr)
        for b in items[1:]:
            acc = acc + getattr(b, attr)
        return acc * (1.0 / len(items))

    return LossBreakdown(avg("l_distill"), avg("l_target"), avg("total"))


def _checkpoint(model: Module, out_dir: Path, epoch: int) -> None:
    path = out_dir / f"ckpt_epoch{epoch}.clfw"
    save_weights(model, path)
    shutil.copyfile(path, out_dir / "ckpt_latest.clfw")


def train(
    student: Module,
    teacher: Module | None,
    dataset: Sequence[PairSample],
    train_cfg: TrainConfig,
    distill_cfg: DistillConfig,
    out_dir,
) -> list[dict]:
    """Train ``student``; writes ``metrics.csv`` and per-epoch checkpoints to ``out_dir``.

    Without a teacher the distillation weight is forced to zero.  Teacher
    score matrices are computed once per pair without gradient tracking and
    reused; the teacher is never modified.
    """
    train_cfg.validate()
    distill_cfg.validate()
    if len(dataset) == 0:
        raise ContractError("training dataset is empty")
    if teacher is None:
        distill_cfg = DistillConfig(distill_cfg.t, 0.0, distill_cfg.c_t)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = out_dir / "metrics.csv"
    if metrics_path.exists():
        metrics_path.unlink()
    metrics_path.write_text("")

    rng = np.random.default_rng(train_cfg.seed)
    params = student.state_dict()
    for p in params.values():
        p.requires_grad = True
        p.grad = np.zeros_like(p.data)
    optimizer = AdamW(params, train_cfg)
    teacher_cache: dict[str, np.ndarray] = {}

    def teacher_scores(sample: PairSample) -> np.ndarray | None:
        if teacher is None:
            return None
        if sample.key not in teacher_cache:
            with nx.no_grad():
                teacher_cache[sample.key] = teacher(sample.imageA, sample.imageB).S.data.copy()
        return teacher_cache[sample.key]

    maes: list[float] = []

    def micro_loss(indices) -> LossBreakdown | None:
        items = []
        for i in indices:
            sample = dataset[i]
            res = pair_losses(student, sample, distill_cfg, teacher_scores(sample))
            if res is not None:
                items.append(res[0])
                maes.append(res[1])
        return _mean_breakdown(items) if items else None

    _checkpoint(student, out_dir, 0)
    rows = []
    vb = train_cfg.virtual_batch
    step = 0
    for epoch in range(train_cfg.epochs):
        lr = lr_schedule(epoch, train_cfg)
        order = rng.integers(0, len(dataset), size=train_cfg.epoch_pairs)
        for start in range(0, train_cfg.epoch_pairs, vb):
            chunk = order[start : start + vb]
            micro = [chunk[k : k + train_cfg.micro_batch] for k in range(0, len(chunk), train_cfg.micro_batch)]
            maes.clear()
            res = accumulate_and_step(optimizer, micro, micro_loss, lr)
            step += 1
            l_d, l_t, tot = res.values() if res is not None else (math.nan,) * 3
            row = {
                "epoch": epoch + 1,
                "step": step,
                "loss": tot,
                "l_distill": l_d,
                "l_target": l_t,
                "mae": float(np.mean(maes)) if maes else math.nan,
                "lr": lr,
            }
            append_metrics(metrics_path, row)
            rows.append(row)
        log.info("epoch %d done: loss %.5g mae %.5g", epoch + 1, rows[-1]["loss"], rows[-1]["mae"])
        _checkpoint(student, out_dir, epoch + 1)
    return rows
