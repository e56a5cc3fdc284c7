import math

import numpy as np
import pytest

from coarse_loftr import numerics as nx
from coarse_loftr.distillation import DistillConfig, kl_distill_loss, soften, target_loss, total_loss
from coarse_loftr.errors import ConfigError, ContractError, DimensionError
from coarse_loftr.numerics import Tensor

import fd_oracle


def test_soften_examples():
    np.testing.assert_allclose(soften(np.full((2, 3), 4.0), 5.0).data, np.full(6, -math.log(6)), rtol=1e-14)
    wide = soften(np.random.default_rng(0).normal(size=(3, 3)), 1e6).data
    assert np.abs(wide + math.log(9)).max() < 1e-4
    np.testing.assert_allclose(soften(np.array([0.0, math.log(9)]), 1.0).data, [math.log(0.1), math.log(0.9)], rtol=1e-14)
    with pytest.raises(ConfigError):
        soften(np.zeros(2), 0.0)


def test_kl_examples():
    S = Tensor(np.random.default_rng(1).normal(size=(4, 5)))
    assert abs(kl_distill_loss(S, S.data.copy(), 5.0).item()) <= 1e-12
    teacher = np.array([[100.0, 0.0]])
    assert kl_distill_loss(Tensor(np.zeros((1, 2))), teacher, 1.0).item() == pytest.approx(math.log(2), abs=1e-12)
    # the t^2 factor scales the divergence between softened distributions
    t = 3.0
    p, q = np.exp(soften(np.zeros((1, 2)), t).data), np.exp(soften(teacher, t).data)
    kl = float(np.sum(q * (np.log(q) - np.log(p))))
    assert kl_distill_loss(Tensor(np.zeros((1, 2))), teacher, t).item() == pytest.approx(t * t * kl, rel=1e-12)


def test_kl_nonnegative_on_random_pairs():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        shape = tuple(rng.integers(1, 7, 2))
        a, b = rng.normal(scale=5, size=shape), rng.normal(scale=5, size=shape)
        assert kl_distill_loss(Tensor(a), b, rng.uniform(0.5, 10)).item() >= 0.0


def test_kl_shape_mismatch():
    with pytest.raises(DimensionError):
        kl_distill_loss(Tensor(np.zeros((2, 2))), np.zeros((2, 3)))


def test_teacher_gets_no_gradient():
    rng = np.random.default_rng(2)
    student = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    teacher = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    nx.backward(kl_distill_loss(student, teacher, 5.0))
    assert not np.any(teacher.grad)
    assert np.any(student.grad)


def test_kl_gradient_matches_finite_differences():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        S = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        teacher = rng.normal(size=(3, 4))
        worst = max(worst, fd_oracle.check(lambda: kl_distill_loss(S, teacher, 5.0), [S]))
    assert worst < 1e-3


def test_target_loss_examples():
    P = Tensor(np.eye(3))
    assert target_loss(P, [(0, 0), (2, 2)]).item() == 0.0
    assert target_loss(Tensor([[math.exp(-1)]]), [(0, 0)]).item() == pytest.approx(1.0, abs=1e-15)
    rng = np.random.default_rng(3)
    Pr = rng.uniform(0.01, 1, (4, 5))
    pairs = [(0, 1), (2, 4), (3, 0)]
    direct = -sum(math.log(Pr[i, j]) for i, j in pairs) / 3
    assert abs(target_loss(Tensor(Pr), pairs).item() - direct) <= 1e-12


def test_target_loss_clamps_and_requires_pairs():
    assert target_loss(Tensor([[0.0]]), [(0, 0)]).item() == pytest.approx(-math.log(1e-12))
    with pytest.raises(ContractError):
        target_loss(Tensor(np.eye(2)), [])


def test_target_loss_gradient():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        P = Tensor(rng.uniform(0.05, 0.95, (3, 4)), requires_grad=True)
        worst = max(worst, fd_oracle.check(lambda: target_loss(P, [(0, 1), (2, 3), (2, 3)]), [P]))
    assert worst < 1e-3


def test_total_loss_examples_and_linearity():
    cfg = DistillConfig()
    assert total_loss(0.0, 1.0, cfg).total == pytest.approx(0.7)
    assert total_loss(1.0, 0.0, cfg).total == pytest.approx(0.3)
    assert total_loss(2.0, 5.0, DistillConfig(c_d=0.0)).total == pytest.approx(3.5)
    a, b = total_loss(1.5, 2.0, cfg).total, total_loss(3.0, 2.0, cfg).total
    assert b - a == pytest.approx(0.3 * 1.5, abs=1e-12)
    out = total_loss(Tensor(0.25), Tensor(0.5), cfg)
    assert abs(out.values()[2] - (0.3 * 0.25 + 0.7 * 0.5)) <= 1e-9


def test_config_validation():
    for bad in (DistillConfig(t=0), DistillConfig(c_d=-1), DistillConfig(c_d=0, c_t=0)):
        with pytest.raises(ConfigError):
            bad.validate()
    assert DistillConfig().t == 5.0
