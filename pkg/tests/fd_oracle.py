"""Central finite-difference oracle, independent of the tape."""
from __future__ import annotations

import numpy as np

from coarse_loftr import numerics as nx

STEP = 1e-4
FLOOR = 1e-7


def rel_err(a, n) -> float:
    a, n = np.asarray(a, dtype=np.float64), np.asarray(n, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)))


def analytic(fn, tensors):
    for t in tensors:
        t.zero_grad()
    loss = fn()
    nx.backward(loss)
    return [t.grad.copy() for t in tensors]


def _value(fn) -> float:
    with nx.no_grad():
        return fn().item()


def numeric_entries(fn, t, index_list, step=STEP):
    out = []
    flat = t.data.reshape(-1)
    for i in index_list:
        orig = flat[i]
        flat[i] = orig + step
        up = _value(fn)
        flat[i] = orig - step
        down = _value(fn)
        flat[i] = orig
        out.append((up - down) / (2 * step))
    return np.array(out)


def check(fn, tensors, max_entries=None, rng=None, step=STEP) -> float:
    """Worst relative error between tape gradients and central differences."""
    grads = analytic(fn, tensors)
    worst = 0.0
    for t, g in zip(tensors, grads):
        idx = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(t.size, max_entries, replace=False)
        num = numeric_entries(fn, t, idx, step)
        worst = max(worst, rel_err(g.reshape(-1)[idx], num))
    return worst


def directional(fn, tensors, rng, step=STEP) -> float:
    """Relative error of the directional derivative along one random direction per tensor."""
    grads = analytic(fn, tensors)
    worst = 0.0
    for t, g in zip(tensors, grads):
        v = rng.standard_normal(t.shape)
        v /= np.linalg.norm(v)
        orig = t.data.copy()
        t.data[...] = orig + step * v
        up = _value(fn)
        t.data[...] = orig - step * v
        down = _value(fn)
        t.data[...] = orig
        worst = max(worst, rel_err(np.sum(g * v), (up - down) / (2 * step)))
    return worst



def norm_rel_err(a, n) -> float:
    a, n = np.asarray(a, dtype=np.float64).ravel(), np.asarray(n, dtype=np.float64).ravel()
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), FLOOR))



def _kink_aware(fn, t, direction, f0, step, min_step=1e-9):
    """Central difference along ``direction``, shrinking the step when the
    second difference reveals a slope break inside [x - h, x + h]."""
    orig = t.data.copy()
    h = step
    while True:
        t.data[...] = orig + h * direction
        up = _value(fn)
        t.data[...] = orig - h * direction
        down = _value(fn)
        t.data[...] = orig
        slope = (up - down) / (2 * h)
        bend = abs(up - 2 * f0 + down)
        if bend <= 1e-3 * abs(up - down) + 1e-13 * abs(f0) or h / 10 < min_step:
            return slope
        h /= 10


def model_report(model, loss_fn, rng, entries_per_tensor=2, step=1e-6) -> dict[str, float]:
    """Norm-wise relative error per parameter tensor.

    Probes are one random unit direction plus a few sampled coordinates.
    """
    named = list(model.named_parameters())
    tensors = [t for _, t in named]
    grads = analytic(loss_fn, tensors)
    f0 = _value(loss_fn)
    report = {}
    for (name, t), g in zip(named, grads):
        v = rng.standard_normal(t.shape)
        v /= np.linalg.norm(v)
        idx = rng.choice(t.size, min(entries_per_tensor, t.size), replace=False)
        directions = [v]
        for i in idx:
            e = np.zeros(t.size)
            e[i] = 1.0
            directions.append(e.reshape(t.shape))
        numeric = [_kink_aware(loss_fn, t, d, f0, step) for d in directions]
        analytic_probe = [float(np.sum(g * d)) for d in directions]
        report[name] = norm_rel_err(analytic_probe, numeric)
    return report
