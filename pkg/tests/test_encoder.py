import numpy as np
import pytest

from hienet import autodiff as ad
from hienet import encoder as enc
from hienet.autodiff import ShapeError, Tensor


def table(V=12, d=3, seed=0):
    cfg = enc.EncoderConfig(d_e=d, filter_sizes=(1,), d_c=2, max_len=8)
    return enc.init_encoder_params(cfg, V, np.random.default_rng(seed))["E"]


def test_embed_cases():
    E = table()
    assert not E.data[0].any()
    tokens, mask = enc.pad_batch([[], [5]], max_len=8, min_len=3)
    X = enc.embed(tokens, E).data
    assert not X[0].any()
    np.testing.assert_array_equal(X[1, 0], E.data[5])
    assert not X[1, 1:].any() and mask.tolist() == [[False] * 3, [True, False, False]]
    ids = np.array([[3, 1, 7, 7]])
    np.testing.assert_array_equal(enc.embed(ids, E).data[0], E.data[[3, 1, 7, 7]])
    with pytest.raises(IndexError):
        enc.embed(np.array([[12]]), E)


def test_pad_batch_truncates():
    tokens, _ = enc.pad_batch([list(range(1, 20)), [4]], max_len=5)
    assert tokens.tolist() == [[1, 2, 3, 4, 5], [4, 0, 0, 0, 0]]


def test_zero_input_gives_relu_bias():
    cfg = enc.EncoderConfig(d_e=4, filter_sizes=(1, 3), d_c=2, max_len=10)
    p = enc.init_encoder_params(cfg, 5, np.random.default_rng(1))
    p["conv1_b"].data = np.array([0.5, -0.5])
    p["conv3_b"].data = np.array([-1.0, 2.0])
    out = enc.forward(Tensor(np.zeros((6, 4))), cfg, p)
    expect = np.array([0.5, 0.0, 0.0, 2.0])
    np.testing.assert_array_equal(out.H.data, np.tile(expect, (6, 1)))
    np.testing.assert_array_equal(out.pooled.data, expect)


def test_hand_width_one_conv():
    cfg = enc.EncoderConfig(d_e=2, filter_sizes=(1,), d_c=2, max_len=4)
    p = enc.init_encoder_params(cfg, 3, np.random.default_rng(2))
    p["conv1_w"].data = np.array([[[1.0, -1.0], [2.0, 0.5]]])
    p["conv1_b"].data = np.array([0.1, 0.0])
    X = np.array([[1.0, 2.0], [-1.0, 0.5]])
    out = enc.forward(Tensor(X), cfg, p)
    hand = [[max(0, 1 + 4 + 0.1), max(0, -1 + 1)], [max(0, -1 + 1 + 0.1), max(0, 1 + 0.25)]]
    np.testing.assert_allclose(out.H.data, hand, atol=1e-15)
    np.testing.assert_allclose(out.pooled.data, [5.1, 1.25], atol=1e-15)


def test_default_width_and_short_input():
    cfg = enc.EncoderConfig()
    p = enc.init_encoder_params(cfg, 30, np.random.default_rng(3), dtype=np.float32)
    X = enc.embed(np.random.default_rng(4).integers(1, 30, (1, 64)), p["E"])
    out = enc.forward(X, cfg, p)
    assert out.H.shape == (1, 64, 640) and out.pooled.shape == (1, 640)
    with pytest.raises(ShapeError):
        enc.forward(Tensor(np.zeros((9, 100))), cfg, p)


def test_pooled_ignores_pad_suffix_order():
    cfg = enc.EncoderConfig(d_e=3, filter_sizes=(1, 2), d_c=4, max_len=10)
    p = enc.init_encoder_params(cfg, 9, np.random.default_rng(5))
    for k in (1, 2):
        p[f"conv{k}_b"].data = -np.abs(p[f"conv{k}_b"].data) - 0.1   # relu(bias) = 0 on pads
    a, _ = enc.pad_batch([[1, 4, 2]], 10, 8)
    b, _ = enc.pad_batch([[1, 4, 2]], 10, 6)
    pa = enc.forward(enc.embed(a, p["E"]), cfg, p).pooled.data
    pb = enc.forward(enc.embed(b, p["E"]), cfg, p).pooled.data
    np.testing.assert_allclose(pa, pb, atol=1e-15)


def test_encoder_gradient():
    cfg = enc.EncoderConfig(d_e=3, filter_sizes=(1, 2, 3), d_c=2, max_len=6)
    p = enc.init_encoder_params(cfg, 7, np.random.default_rng(6))
    for k in (1, 2, 3):      # keep pad positions off the relu kink at 0
        p[f"conv{k}_b"].data = np.array([0.2, -0.2]) * k
    tokens, _ = enc.pad_batch([[1, 2, 3, 4], [5, 6]], 6, 3)
    w = np.random.default_rng(7).standard_normal((tokens.shape[1], cfg.width))

    def f():
        out = enc.forward(enc.embed(tokens, p["E"]), cfg, p)
        return ad.add(ad.sum_(ad.mul(out.H, ad.const(w))), ad.sum_(out.pooled))
    assert ad.grad_check(f, list(p.values())) <= 1e-4
