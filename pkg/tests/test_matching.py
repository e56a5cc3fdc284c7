import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from coarse_loftr import numerics as nx
from coarse_loftr.errors import ConfigError, DimensionError
from coarse_loftr.matching import cell_center, dual_softmax, extract_matches, mae, score_matrix
from coarse_loftr.numerics import Tensor

import fd_oracle


def test_score_matrix_examples():
    e = Tensor([[1.0, 0.0]])
    np.testing.assert_array_equal(score_matrix(e, e, 1.0).data, [[1.0]])
    eye = Tensor(np.eye(3))
    np.testing.assert_array_equal(score_matrix(eye, eye, 1.0).data, np.eye(3))
    f = Tensor(np.random.default_rng(0).standard_normal((4, 5)))
    np.testing.assert_allclose(score_matrix(f, f, 0.5).data, 2 * score_matrix(f, f, 1.0).data, rtol=1e-15)


def test_score_matrix_rejects_bad_tau():
    for tau in (0.0, -1.0):
        with pytest.raises(ConfigError):
            score_matrix(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 2))), tau)
    with pytest.raises(DimensionError):
        score_matrix(Tensor(np.ones((1, 2))), Tensor(np.ones((1, 3))), 1.0)


def test_dual_softmax_examples():
    np.testing.assert_array_equal(dual_softmax(Tensor([[3.7]])).data, [[1.0]])
    sig = 1.0 / (1.0 + math.exp(-10.0))
    off = math.exp(-10.0) / (1.0 + math.exp(-10.0))
    P = dual_softmax(Tensor([[10.0, 0.0], [0.0, 10.0]])).data
    # each entry is the product of two identical factors
    np.testing.assert_allclose(P, [[sig * sig, off * off], [off * off, sig * sig]], rtol=1e-12)
    assert P[0, 0] == pytest.approx(0.99991, abs=1e-5)
    np.testing.assert_allclose(dual_softmax(Tensor(np.full((3, 4), 2.5))).data, np.full((3, 4), 1 / 12), rtol=1e-14)


def dual_softmax_checks(S):
    P = dual_softmax(Tensor(S)).data
    row = nx.softmax(Tensor(S), 1).data
    col = nx.softmax(Tensor(S), 0).data
    assert np.all((P >= 0) & (P <= 1))
    assert np.all(P <= row + 1e-15) and np.all(P <= col + 1e-15)
    assert np.all(P.sum(axis=1) <= 1 + 1e-12) and np.all(P.sum(axis=0) <= 1 + 1e-12)
    shifted = dual_softmax(Tensor(S + 7.25)).data
    assert np.abs(shifted - P).max() < 1e-9


def test_dual_softmax_properties_random():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        dual_softmax_checks(rng.normal(scale=rng.uniform(0.1, 30), size=tuple(rng.integers(1, 12, 2))))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)), elements=st.floats(-80, 80)))
def test_dual_softmax_properties_hypothesis(S):
    dual_softmax_checks(S)


def test_dual_softmax_gradients():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        S = Tensor(rng.standard_normal((3, 4)) * 2, requires_grad=True)
        w = rng.standard_normal((3, 4))
        worst = max(worst, fd_oracle.check(lambda: nx.sum(dual_softmax(S) * Tensor(w)), [S]))
    assert worst < 1e-3


def test_extract_diagonal():
    P = np.full((4, 4), 0.01) + np.eye(4) * 0.89
    got = extract_matches(P, 0.2)
    assert [(i, j) for i, j, _ in got.matches] == [(0, 0), (1, 1), (2, 2), (3, 3)]
    assert all(c == pytest.approx(0.9) for _, _, c in got.matches)


def test_extract_high_threshold_empty():
    P = np.random.default_rng(1).uniform(0, 0.999, (5, 5))
    assert len(extract_matches(P, 1.0 - 1e-9)) == 0
    with pytest.raises(ConfigError):
        extract_matches(P, 0.0)
    with pytest.raises(ConfigError):
        extract_matches(P, 1.5)


def exhaustive(P, threshold, mnn):
    n, m = P.shape
    out = set()
    for i in range(n):
        for j in range(m):
            if P[i, j] < threshold:
                continue
            if mnn:
                best_j = min(range(m), key=lambda jj: (-P[i, jj], jj))
                best_i = min(range(n), key=lambda ii: (-P[ii, j], ii))
                if best_j != j or best_i != i:
                    continue
            out.add((i, j))
    return out


@pytest.mark.parametrize("mnn", [True, False])
def test_extract_matches_exhaustive_oracle(mnn):
    for seed in range(50):
        rng = np.random.default_rng(seed)
        P = dual_softmax(Tensor(rng.normal(scale=3, size=(8, 8)))).data
        if seed % 5 == 0:
            P = np.round(P, 1)  # introduce ties
        thr = 0.05 if seed % 2 else 0.2
        got = extract_matches(P, thr, mnn)
        assert {(i, j) for i, j, _ in got.matches} == exhaustive(P, thr, mnn)
        assert all(c >= thr for _, _, c in got.matches)
        if mnn:
            rows = [i for i, _, _ in got.matches]
            cols = [j for _, j, _ in got.matches]
            assert len(set(rows)) == len(rows) and len(set(cols)) == len(cols) and len(rows) <= 8


def test_ties_go_to_smaller_index():
    P = np.array([[0.5, 0.5], [0.1, 0.1]])
    assert [(i, j) for i, j, _ in extract_matches(P, 0.2).matches] == [(0, 0)]


def test_mae_examples():
    G = np.zeros((3, 4))
    G[0, 1] = G[2, 3] = 1.0
    assert mae(G, G) == 0.0
    assert mae(np.zeros((3, 4)), G) == pytest.approx(2 / 12)
    U = np.full((3, 4), 1 / 12)
    direct = sum(abs(U[i, j] - G[i, j]) for i in range(3) for j in range(4)) / 12
    assert mae(U, G) == pytest.approx(direct, abs=1e-15)
    with pytest.raises(DimensionError):
        mae(np.zeros((2, 2)), np.zeros((2, 3)))


def test_mae_range():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        P = dual_softmax(Tensor(rng.normal(size=(5, 6)))).data
        G = (rng.random((5, 6)) < 0.2).astype(float)
        assert 0.0 <= mae(P, G) <= 1.0


def test_cell_center():
    assert cell_center(0, 4) == (8, 8)
    assert cell_center(5, 4) == (24, 24)
    assert cell_center(7, 4, step=8) == (28, 12)
