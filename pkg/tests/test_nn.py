import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import switchnet.nn as nn_mod
from switchnet.exceptions import InvalidWidth, ShapeMismatch
from switchnet.nn import (
    build_lenet_small,
    build_mlp,
    count_layer_params,
    count_params,
    forward,
    forward_conv_scaled,
    forward_fc_scaled,
)


def random_factors(model, rng, zero_frac=0.2):
    out = []
    for n in model.scalable_sizes():
        g = rng.uniform(0.0, 2.0, n)
        g[rng.random(n) < zero_frac] = 0.0
        out.append(g)
    return out


def naive_mlp(model, x, g):
    """Per-sample scalar loops."""
    ws = [w.data for w in model.weights]
    logits = np.zeros((x.shape[0], model.num_classes))
    for b in range(x.shape[0]):
        h = [x[b, j] * g[0][j] for j in range(x.shape[1])]
        for k, w in enumerate(ws):
            nxt = []
            for o in range(w.shape[1]):
                acc = 0.0
                for j in range(w.shape[0]):
                    acc += h[j] * w[j, o]
                nxt.append(acc)
            if k < len(ws) - 1:
                nxt = [max(v, 0.0) * g[k + 1][o] for o, v in enumerate(nxt)]
            h = nxt
        logits[b] = h
    return logits


def naive_lenet(model, x, g):
    """Direct loops for conv, batch statistics, pooling and the fc tail."""
    h = x.reshape((x.shape[0],) + model.input_shape)
    conv_ws = [w.data for w in model.weights if w.data.ndim == 4]
    fc_ws = [w.data for w in model.weights if w.data.ndim == 2]
    for n, w in enumerate(conv_ws):
        b, c_in, hh, ww = h.shape
        c_out, _, k, _ = w.shape
        ho, wo = hh - k + 1, ww - k + 1
        z = np.zeros((b, c_out, ho, wo))
        for i in range(b):
            for o in range(c_out):
                for y in range(ho):
                    for q in range(wo):
                        z[i, o, y, q] = np.sum(h[i, :, y:y + k, q:q + k] * w[o])
        bn = model.bn[n]
        for o in range(c_out):
            vals = z[:, o]
            mu = vals.sum() / vals.size
            var = ((vals - mu) ** 2).sum() / vals.size
            z[:, o] = bn.gamma.data[o] * (vals - mu) / np.sqrt(var + 1e-5) + bn.beta.data[o]
        z = np.maximum(z, 0.0) * g[n][None, :, None, None]
        p = np.zeros((b, c_out, ho // 2, wo // 2))
        for i in range(b):
            for o in range(c_out):
                for y in range(ho // 2):
                    for q in range(wo // 2):
                        p[i, o, y, q] = z[i, o, 2 * y:2 * y + 2, 2 * q:2 * q + 2].max()
        h = p
    h = h.reshape(h.shape[0], -1) * g[len(conv_ws)]
    for k, w in enumerate(fc_ws):
        h = h @ w
        if k < len(fc_ws) - 1:
            h = np.maximum(h, 0.0) * g[len(conv_ws) + 1 + k]
    return h


class TestBuild:
    def test_mlp_shapes(self):
        m = build_mlp([784, 300, 100], 10)
        assert [w.shape for w in m.weights] == [(784, 300), (300, 100), (100, 10)]
        assert m.scalable_sizes() == [784, 300, 100]
        assert m.architecture() == [784, 300, 100, 10]

    def test_mlp_minimal(self):
        m = build_mlp([1], 2)
        assert [w.shape for w in m.weights] == [(1, 2)]

    def test_mlp_seed_determinism(self):
        a, b = build_mlp([5, 4], 3, seed=7), build_mlp([5, 4], 3, seed=7)
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a.weights, b.weights))
        c = build_mlp([5, 4], 3, seed=8)
        assert not np.array_equal(a.weights[0].data, c.weights[0].data)

    def test_mlp_init_variance(self):
        w = build_mlp([784, 300], 10, seed=0).weights[0].data
        assert w.mean() == pytest.approx(0.0, abs=2e-3)
        assert w.var() == pytest.approx(0.01, rel=0.02)

    def test_output_not_scalable_and_no_biases(self):
        m = build_lenet_small([4, 8], [32], 10)
        assert not m.layers[-1].scalable
        assert all(w.data.ndim in (2, 4) for w in m.weights)
        fc_rows = [w.shape[0] for w in m.weights if w.data.ndim == 2]
        fc_layers = [l for l in m.layers if l.kind == "fc"]
        assert fc_rows == [l.fan_in for l in fc_layers]

    def test_lenet_classic_shape(self):
        m = build_lenet_small([20, 50], [500], 10)
        assert [w.shape for w in m.weights] == [(20, 1, 5, 5), (50, 20, 5, 5), (800, 500), (500, 10)]
        assert m.architecture() == [20, 50, 800, 500, 10]

    def test_lenet_desk_shape(self):
        m = build_lenet_small([4, 8], [32], 10)
        assert [w.shape for w in m.weights] == [(4, 1, 5, 5), (8, 4, 5, 5), (128, 32), (32, 10)]
        assert forward(m, np.zeros((3, 784))).shape == (3, 10)

    def test_lenet_kaiming(self):
        w = build_lenet_small([64, 64], [10], 10, seed=1).weights[1].data
        assert w.std() == pytest.approx(np.sqrt(2.0 / (64 * 25)), rel=0.03)

    def test_lenet_seed_determinism(self):
        a, b = build_lenet_small([4, 8], [32], seed=3), build_lenet_small([4, 8], [32], seed=3)
        assert all(np.array_equal(x.data, y.data) for x, y in zip(a.parameters(), b.parameters()))

    @pytest.mark.parametrize("widths", [[784, 0], [0], []])
    def test_mlp_invalid_width(self, widths):
        with pytest.raises(InvalidWidth):
            build_mlp(widths, 10)

    def test_lenet_invalid(self):
        with pytest.raises(InvalidWidth):
            build_lenet_small([], [32])
        with pytest.raises(InvalidWidth):
            build_lenet_small([4, 0], [32])
        with pytest.raises(InvalidWidth):
            build_lenet_small([4, 4, 4], [32])  # 28x28 is too small for three blocks


class TestForward:
    def test_mlp_unit_scaling_bitwise(self):
        rng = np.random.default_rng(0)
        m = build_mlp([12, 7, 5], 4, seed=1)
        x = rng.normal(size=(6, 12))
        ones = [np.ones(n) for n in m.scalable_sizes()]
        assert np.array_equal(forward_fc_scaled(m, x, ones).data, forward(m, x).data)

    def test_conv_unit_scaling_bitwise(self):
        rng = np.random.default_rng(0)
        m = build_lenet_small([2, 3], [6], 4, seed=1, image_size=16)
        x = rng.normal(size=(3, 256))
        ones = [np.ones(n) for n in m.scalable_sizes()]
        assert np.array_equal(forward_conv_scaled(m, x, ones).data, forward(m, x).data)

    def test_mlp_matches_naive(self):
        rng = np.random.default_rng(2)
        m = build_mlp([9, 6, 4], 3, seed=2)
        x = rng.normal(size=(4, 9))
        g = random_factors(m, rng)
        out = forward_fc_scaled(m, x, g).data
        np.testing.assert_allclose(out, naive_mlp(m, x, g), rtol=1e-12, atol=1e-14)

    def test_conv_matches_naive(self):
        rng = np.random.default_rng(3)
        m = build_lenet_small([2, 3], [5], 4, seed=3, image_size=16)
        x = rng.normal(size=(3, 256))
        g = random_factors(m, rng)
        out = forward_conv_scaled(m, x, g).data
        np.testing.assert_allclose(out, naive_lenet(m, x, g), rtol=1e-12, atol=1e-13)

    def test_zero_channel_is_zero_before_pool(self, monkeypatch):
        rng = np.random.default_rng(4)
        m = build_lenet_small([3], [5], 2, seed=4, image_size=12)
        g = [np.ones(n) for n in m.scalable_sizes()]
        g[0][1] = 0.0
        seen = []
        real = nn_mod.maxpool2d

        def spy(h, window, *a):
            seen.append(h.data.copy())
            return real(h, window, *a)

        monkeypatch.setattr(nn_mod, "maxpool2d", spy)
        forward_conv_scaled(m, rng.normal(size=(2, 144)), g)
        assert np.all(seen[0][:, 1] == 0.0)
        assert np.any(seen[0][:, 0] != 0.0)

    def test_conv_rejects_mlp(self):
        with pytest.raises(ShapeMismatch):
            forward_conv_scaled(build_mlp([4], 2), np.zeros((1, 4)), [np.ones(4)])
        with pytest.raises(ShapeMismatch):
            forward_fc_scaled(build_lenet_small([2], [3], 2, image_size=8), np.zeros((1, 64)), None)

    def test_factor_shape_mismatch(self):
        m = build_mlp([4, 3], 2)
        with pytest.raises(ShapeMismatch):
            forward(m, np.zeros((1, 4)), [np.ones(4)])
        with pytest.raises(ShapeMismatch):
            forward(m, np.zeros((1, 4)), [np.ones(4), np.ones(2)])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), layer=st.integers(0, 2))
def test_zero_factor_independence_mlp(seed, layer):
    rng = np.random.default_rng(seed)
    m = build_mlp([8, 6, 5], 3, seed=seed % 97)
    x = rng.normal(size=(4, 8))
    g = random_factors(m, rng, zero_frac=0.0)
    j = int(rng.integers(0, len(g[layer])))
    g[layer][j] = 0.0
    before = forward(m, x, g).data
    if layer == 0:
        x = x.copy()
        x[:, j] = rng.normal(size=4) * 100  # pixel j feeds nothing
    else:
        # incoming weights of neuron j live in column j of the previous matrix
        m.weights[layer - 1].data[:, j] = rng.normal(size=m.weights[layer - 1].shape[0]) * 100
    assert np.array_equal(forward(m, x, g).data, before)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_zero_factor_independence_conv(seed):
    rng = np.random.default_rng(seed)
    m = build_lenet_small([3, 4], [5], 3, seed=seed % 89, image_size=16)
    x = rng.normal(size=(3, 256))
    g = random_factors(m, rng, zero_frac=0.0)
    c = int(rng.integers(0, 4))
    g[1][c] = 0.0
    before = forward(m, x, g).data
    m.weights[1].data[c] = rng.normal(size=m.weights[1].shape[1:]) * 50
    assert np.array_equal(forward(m, x, g).data, before)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_unit_scaling_bitwise_property(seed):
    rng = np.random.default_rng(seed)
    widths = [int(rng.integers(1, 10)) for _ in range(int(rng.integers(1, 4)))]
    m = build_mlp(widths, int(rng.integers(2, 5)), seed=seed)
    x = rng.normal(size=(int(rng.integers(1, 5)), widths[0]))
    ones = [np.ones(n) for n in m.scalable_sizes()]
    assert np.array_equal(forward(m, x, ones).data, forward(m, x).data)


class TestCountParams:
    def test_values(self):
        assert count_params([784, 300, 100, 10]) == 266200
        assert count_params([456, 134, 45, 10]) == 67584
        assert count_params([1, 1]) == 1

    def test_saved_fraction(self):
        saved = 1 - count_params([456, 134, 45, 10]) / count_params([784, 300, 100, 10])
        assert saved == pytest.approx(0.7461, abs=1e-4)

    def test_layer_params_match_model(self):
        m = build_mlp([784, 300, 100], 10)
        assert count_layer_params(m.layers) == count_params([784, 300, 100, 10]) == m.n_params()
        lenet = build_lenet_small([20, 50], [500], 10)
        assert lenet.n_params() == 20 * 25 + 50 * 20 * 25 + 800 * 500 + 500 * 10

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(1, 500), min_size=2, max_size=6))
    def test_pairwise_sum(self, arch):
        assert count_params(arch) == sum(arch[i] * arch[i + 1] for i in range(len(arch) - 1))
