import math

import numpy as np
import pytest

from coarse_loftr import numerics as nx
from coarse_loftr.attention import (
    AttentionConfig,
    EncoderLayer,
    LoFTRModule,
    linear_attention_fast,
    linear_attention_reference,
    phi,
    positional_encoding,
)
from coarse_loftr.backbone import FeatureGrid
from coarse_loftr.errors import ConfigError, DimensionError
from coarse_loftr.numerics import Tensor

import fd_oracle


def qkv(rng, heads, n, d, m=None, dtype=np.float64):
    m = n if m is None else m
    return (Tensor(rng.standard_normal(s).astype(dtype)) for s in ((heads, n, d), (heads, m, d), (heads, m, d)))


def test_phi_values():
    out = phi(Tensor([0.0, 2.0, -20.0])).data
    assert out[0] == 1.0 and out[1] == 3.0
    # elu(-20) = e^-20 - 1, so the feature map is tiny yet strictly positive
    assert out[2] > 0.0 and out[2] == pytest.approx(math.exp(-20), rel=1e-6)


@pytest.mark.parametrize("fn", [linear_attention_reference, linear_attention_fast])
def test_single_token_returns_v(fn):
    q, k, v = qkv(np.random.default_rng(0), 2, 1, 4)
    np.testing.assert_allclose(fn(q, k, v).data, v.data, rtol=1e-15)


def test_identical_keys_average_values():
    rng = np.random.default_rng(1)
    q = Tensor(rng.standard_normal((1, 5, 3)))
    k = Tensor(np.tile(rng.standard_normal((1, 1, 3)), (1, 6, 1)))
    v = Tensor(rng.standard_normal((1, 6, 3)))
    expected = np.broadcast_to(v.data.mean(axis=1, keepdims=True), (1, 5, 3))
    np.testing.assert_allclose(linear_attention_reference(q, k, v).data, expected, atol=1e-14)
    np.testing.assert_allclose(linear_attention_fast(q, k, v).data, expected, atol=1e-14)


def test_fast_matches_reference_f64():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n, heads = [1, 4, 16, 32][seed % 4], 1 + seed % 2
        q, k, v = qkv(rng, heads, n, 8)
        worst = max(worst, np.abs(linear_attention_fast(q, k, v).data - linear_attention_reference(q, k, v).data).max())
    assert worst < 1e-10


def test_fast_matches_reference_f32_and_cross_lengths():
    rng = np.random.default_rng(2)
    q, k, v = qkv(rng, 2, 9, 4, m=13, dtype=np.float32)
    assert np.abs(linear_attention_fast(q, k, v).data - linear_attention_reference(q, k, v).data).max() < 1e-4


def test_kv_summary_matches_einsum_contraction():
    # the lowering must agree with the direct "nshd,nshv->nhdv" contraction
    rng = np.random.default_rng(3)
    heads, n, d = 2, 11, 4
    q, k, v = qkv(rng, heads, n, d)
    fk = phi(k).data
    kv = np.einsum("nshd,nshv->nhdv", fk.transpose(1, 0, 2)[None], v.data.transpose(1, 0, 2)[None])[0]
    fq = phi(q).data
    z = np.einsum("hnd,hd->hn", fq, fk.sum(axis=1))[..., None]
    expected = np.einsum("hnd,hdv->hnv", fq, kv) / z
    np.testing.assert_allclose(linear_attention_fast(q, k, v).data, expected, rtol=1e-12)


def test_fast_path_never_builds_sequence_squared_tensor():
    heads, n, d = 1, 64, 4
    q, k, v = (Tensor(t.data, requires_grad=True) for t in qkv(np.random.default_rng(4), heads, n, d))
    out = nx.sum(linear_attention_fast(q, k, v))
    assert max(node.size for node in nx.tape_order(out)) < n * n
    ref = nx.sum(linear_attention_reference(q, k, v))
    assert max(node.size for node in nx.tape_order(ref)) >= n * n


def test_reference_rows_within_value_envelope():
    for seed in range(10):
        q, k, v = qkv(np.random.default_rng(seed), 2, 7, 3)
        out = linear_attention_reference(q, k, v).data
        lo, hi = v.data.min(axis=1, keepdims=True), v.data.max(axis=1, keepdims=True)
        assert np.all(out >= lo - 1e-12) and np.all(out <= hi + 1e-12)


def test_attention_shape_errors():
    with pytest.raises(DimensionError):
        linear_attention_fast(Tensor(np.ones((1, 3, 4))), Tensor(np.ones((1, 3, 5))), Tensor(np.ones((1, 3, 4))))


def pe_oracle(h, w, d):
    out = np.zeros((h * w, d))
    q = d // 4
    for r in range(h):
        for c in range(w):
            for k in range(q):
                f = 10000.0 ** (-k / q)
                out[r * w + c, k] = math.sin(c * f)
                out[r * w + c, q + k] = math.cos(c * f)
                out[r * w + c, 2 * q + k] = math.sin(r * f)
                out[r * w + c, 3 * q + k] = math.cos(r * f)
    return out


def test_positional_encoding_oracle_and_range():
    pe = positional_encoding(4, 4, 32).data
    np.testing.assert_allclose(pe, pe_oracle(4, 4, 32), atol=1e-12)
    assert pe.min() >= -1 and pe.max() <= 1
    pe = positional_encoding(3, 5, 8).data
    np.testing.assert_allclose(pe, pe_oracle(3, 5, 8), atol=1e-12)


def test_positional_encoding_x_only_channels():
    pe = positional_encoding(4, 4, 32).data
    diff = np.abs(pe[1 * 4 + 1] - pe[1 * 4 + 3])  # same row, different column
    assert diff[:16].max() > 0 and diff[16:].max() == 0


def test_positional_encoding_needs_multiple_of_four():
    with pytest.raises(ConfigError):
        positional_encoding(2, 2, 6)


def test_config_validation():
    with pytest.raises(ConfigError):
        AttentionConfig(d_model=32, n_heads=3).validate()
    with pytest.raises(ConfigError):
        AttentionConfig(layer_pattern=()).validate()
    with pytest.raises(ConfigError):
        AttentionConfig(layer_pattern=("self", "sideways")).validate()


def test_zeroed_output_projections_give_identity():
    layer = EncoderLayer(AttentionConfig(), np.random.default_rng(5))
    for lin in (layer.merge, layer.ffn2):
        lin.w.data[...] = 0.0
        lin.b.data[...] = 0.0
    x = Tensor(np.random.default_rng(6).standard_normal((7, 32)))
    src = Tensor(np.random.default_rng(7).standard_normal((5, 32)))
    np.testing.assert_array_equal(layer(x, src).data, x.data)


def test_layer_rejects_mismatched_dims():
    layer = EncoderLayer(AttentionConfig(), np.random.default_rng(5))
    with pytest.raises(DimensionError):
        layer(Tensor(np.ones((3, 32))), Tensor(np.ones((3, 16))))


def grids(rng, shapeA=(2, 3), shapeB=(3, 2), d=32):
    return (
        FeatureGrid(*shapeA, Tensor(rng.standard_normal((shapeA[0] * shapeA[1], d)))),
        FeatureGrid(*shapeB, Tensor(rng.standard_normal((shapeB[0] * shapeB[1], d)))),
    )


def test_module_swap_symmetry_and_shapes():
    mod = LoFTRModule(AttentionConfig(n_heads=2), np.random.default_rng(8))
    ga, gb = grids(np.random.default_rng(9))
    out = mod(ga, gb)
    swapped = mod(gb, ga)
    assert out.featA.shape == (6, 32) and out.featB.shape == (6, 32)
    assert out.featA.data.tobytes() == swapped.featB.data.tobytes()
    assert out.featB.data.tobytes() == swapped.featA.data.tobytes()


def test_empty_pattern_adds_encoding_only():
    mod = LoFTRModule(AttentionConfig(layer_pattern=()), np.random.default_rng(8))
    ga, gb = grids(np.random.default_rng(10), (2, 2), (1, 4))
    out = mod(ga, gb)
    np.testing.assert_array_equal(out.featA.data, ga.values.data + positional_encoding(2, 2, 32).data)
    np.testing.assert_array_equal(out.featB.data, gb.values.data + positional_encoding(1, 4, 32).data)


def test_reference_and_fast_modules_agree():
    mod = LoFTRModule(AttentionConfig(), np.random.default_rng(11))
    ga, gb = grids(np.random.default_rng(12))
    fast = mod(ga, gb)
    ref = mod(ga, gb, attention=linear_attention_reference)
    assert np.abs(fast.featA.data - ref.featA.data).max() < 1e-10


@pytest.mark.parametrize("heads", [1, 2])
def test_layer_gradients(heads):
    cfg = AttentionConfig(d_model=8, n_heads=heads, ffn_dim=12)
    layer = EncoderLayer(cfg, np.random.default_rng(13))
    rng = np.random.default_rng(14)
    x = Tensor(rng.standard_normal((5, 8)), requires_grad=True)
    src = Tensor(rng.standard_normal((4, 8)), requires_grad=True)
    w = rng.standard_normal((5, 8))

    def loss():
        return nx.sum(layer(x, src) * Tensor(w))

    assert fd_oracle.check(loss, layer.parameters() + [x, src]) < 1e-3


def test_attention_kernel_gradients():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        q, k, v = (Tensor(t.data, requires_grad=True) for t in qkv(rng, 2, 5, 3, m=4))
        w = rng.standard_normal((2, 5, 3))
        worst = max(worst, fd_oracle.check(lambda: nx.sum(linear_attention_fast(q, k, v) * Tensor(w)), [q, k, v]))
    assert worst < 1e-3


def test_module_gradients():
    cfg = AttentionConfig(d_model=8, n_heads=2, ffn_dim=8)
    mod = LoFTRModule(cfg, np.random.default_rng(15))
    ga, gb = grids(np.random.default_rng(16), (2, 2), (1, 3), d=8)
    ga.values.requires_grad = True
    ga.values.grad = np.zeros_like(ga.values.data)
    w = np.random.default_rng(17).standard_normal((4, 8))

    def loss():
        out = mod(ga, gb)
        return nx.sum(out.featA * Tensor(w)) + nx.mean(out.featB * out.featB)

    assert fd_oracle.check(loss, mod.parameters() + [ga.values], max_entries=6, rng=np.random.default_rng(18)) < 1e-3
