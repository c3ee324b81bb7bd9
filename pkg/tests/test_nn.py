import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vcc.errors import DimensionError, NumericError
from vcc.nn import (GRU, Activation, Adam, CausalConv, Dense, Embedding, LayerSpec, Param, Sequential,
                    adam_step, check_network, grad_check, mlp, receptive_field, softmax,
                    softmax_cross_entropy)

F64 = np.float64


class TestDense:
    def test_identity(self):
        d = Dense(4, 4, dtype=F64)
        d.w.value[...] = np.eye(4)
        x = np.random.default_rng(0).standard_normal((3, 4))
        np.testing.assert_array_equal(d(x), x)

    def test_squared_loss_closed_form(self, rng):
        d = Dense(3, 2, rng, dtype=F64)
        d.b.value[...] = rng.standard_normal(2)
        x = rng.standard_normal(3)
        y = rng.standard_normal(2)
        out, cache = d.forward(x[None])
        d.backward(cache, 2 * (out - y))
        resid = d.w.value.T @ x + d.b.value - y
        np.testing.assert_allclose(d.w.grad, np.outer(x, 2 * resid), rtol=1e-12)
        np.testing.assert_allclose(d.b.grad, 2 * resid, rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            Dense(3, 2).forward(np.zeros((5, 4)))

    def test_bad_spec(self):
        with pytest.raises(DimensionError):
            LayerSpec("dense", 0, 3)
        with pytest.raises(DimensionError):
            LayerSpec("causal_conv", 2, 3, kernel=2, dilation=0)


class TestCausalConv:
    def test_dilation_four_dependencies(self, rng):
        conv = CausalConv(1, 1, kernel=2, dilation=4, rng=rng, dtype=F64)
        x = rng.standard_normal((20, 1))
        base = conv(x)
        t = 12
        for s in range(20):
            x2 = x.copy()
            x2[s] += 1.0
            changed = not np.isclose(conv(x2)[t, 0], base[t, 0])
            assert changed == (s in (t, t - 4))

    def test_batch_matches_single(self, rng):
        conv = CausalConv(3, 5, dilation=2, rng=rng, dtype=F64)
        x = rng.standard_normal((4, 9, 3))
        y = conv(x)
        for b in range(4):
            np.testing.assert_allclose(y[b], conv(x[b]), rtol=1e-12)

    def test_rank_error(self):
        with pytest.raises(DimensionError):
            CausalConv(1, 1).forward(np.zeros(5))

    @settings(max_examples=25)
    @given(seed=st.integers(0, 2**16), t=st.integers(1, 30), depth=st.integers(1, 4))
    def test_causality(self, seed, t, depth):
        rng = np.random.default_rng(seed)
        layers = []
        for i in range(depth):
            layers += [CausalConv(2, 2, dilation=2 ** i, rng=rng, dtype=F64), Activation("tanh", 2)]
        net = Sequential(layers)
        x = rng.standard_normal((32, 2))
        x2 = x.copy()
        x2[t:] += rng.standard_normal((32 - t, 2))
        np.testing.assert_array_equal(net(x)[:t], net(x2)[:t])


class TestGradCheck:
    def test_dense_tanh(self, rng):
        net = mlp([5, 8, 8, 3], "tanh", rng, F64)
        assert check_network(net, rng.standard_normal((6, 5))) < 1e-4

    def test_gru(self, rng):
        gru = GRU(3, 4, rng, F64)
        assert check_network(Sequential([gru]), rng.standard_normal((2, 7, 3))) < 1e-4

    def test_conv_stack(self, rng):
        net = Sequential([CausalConv(2, 4, dilation=1, rng=rng, dtype=F64), Activation("tanh", 4),
                          CausalConv(4, 3, dilation=2, rng=rng, dtype=F64), Activation("sigmoid", 3),
                          CausalConv(3, 2, kernel=3, dilation=4, rng=rng, dtype=F64)])
        assert check_network(net, rng.standard_normal((2, 16, 2))) < 1e-4

    def test_embedding(self, rng):
        emb = Embedding(6, 3, rng, F64)
        codes = np.array([0, 5, 2, 2, 1])
        proj = rng.standard_normal((5, 3))

        def loss(backprop):
            y, cache = emb.forward(codes)
            if backprop:
                emb.backward(cache, proj)
            return float(np.sum(y * proj))

        assert grad_check(loss, emb.params()) < 1e-4

    def test_softmax_cross_entropy(self, rng):
        w = Param(rng.standard_normal((6, 5)))
        t = rng.integers(0, 5, 6)
        mask = np.array([1, 1, 0, 1, 0, 1.0])

        def loss(backprop):
            value, g = softmax_cross_entropy(w.value, t, mask)
            if backprop:
                w.grad += g
            return value

        assert grad_check(loss, [w]) < 1e-4

    def test_needs_float64(self):
        d = Dense(2, 2)
        with pytest.raises(TypeError):
            check_network(Sequential([d]), np.zeros((1, 2), np.float32))

    @settings(max_examples=15)
    @given(seed=st.integers(0, 2**16), kind=st.sampled_from(["dense", "gru", "conv"]),
           a=st.integers(1, 5), b=st.integers(1, 5))
    def test_every_kind(self, seed, kind, a, b):
        rng = np.random.default_rng(seed)
        if kind == "dense":
            net = Sequential([Dense(a, b, rng, F64), Activation("tanh", b)])
        elif kind == "gru":
            net = Sequential([GRU(a, b, rng, F64)])
        else:
            net = Sequential([CausalConv(a, b, dilation=int(rng.integers(1, 4)), rng=rng, dtype=F64)])
        assert check_network(net, rng.standard_normal((6, a)), seed=seed) < 1e-4


class TestNumerics:
    @pytest.mark.filterwarnings("ignore:overflow")
    def test_nonfinite_names_layer(self):
        d = Dense(2, 2, dtype=F64)
        d.w.value[...] = 1e308
        net = Sequential([Activation("identity", 2), d, Activation("tanh", 2)])
        with pytest.raises(NumericError) as err:
            net(np.full((1, 2), 10.0))
        assert err.value.layer_index == 1

    def test_softmax_rows(self, rng):
        p = softmax(rng.standard_normal((4, 7)) * 50)
        np.testing.assert_allclose(p.sum(axis=1), 1.0)

    def test_uniform_logits_nll(self):
        loss, _ = softmax_cross_entropy(np.zeros((3, 256)), [0, 17, 255])
        assert loss == pytest.approx(np.log(256))

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(7)
            net = mlp([3, 6, 2], "tanh", rng)
            x = rng.standard_normal((10, 3)).astype(np.float32)
            opt = Adam(net.params(), lr=1e-2)
            outs = []
            for _ in range(3):
                y, cache = net.forward(x)
                net.backward(cache, y)
                opt.step()
                outs.append(y)
            return np.stack(outs), [p.value for p in net.params()]

        (y1, p1), (y2, p2) = run(), run()
        assert y1.tobytes() == y2.tobytes()
        assert all(a.tobytes() == b.tobytes() for a, b in zip(p1, p2))


class TestAdam:
    def test_zero_gradient(self):
        p = Param(np.array([1.0, -2.0]))
        adam_step([p], lr=0.1)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])

    def test_constant_gradient_step_is_lr(self):
        p = Param(np.zeros(3))
        g = np.array([0.5, -3.0, 1e-3])
        prev = p.value.copy()
        for step in range(1, 201):
            p.grad[...] = g
            adam_step([p], lr=1e-2, step=step)
            disp = p.value - prev
            prev = p.value.copy()
            np.testing.assert_allclose(disp, -1e-2 * np.sign(g), rtol=1e-4)

    def test_grads_zeroed(self):
        p = Param(np.ones(2))
        p.grad[...] = 1.0
        adam_step([p])
        assert not p.grad.any()

    def test_quadratic_bowl(self):
        p = Param(np.array([1.0, -2.0, 0.5]))
        opt = Adam([p], lr=1e-2)
        for _ in range(2000):
            p.grad += 2 * p.value
            opt.step()
        assert np.linalg.norm(p.value) < 1e-3

    def test_clip(self):
        p = Param(np.zeros(2))
        opt = Adam([p], lr=1.0, clip=1.0)
        p.grad[...] = [30.0, 40.0]
        opt.step()
        assert opt.t == 1
        np.testing.assert_allclose(p.adam_m, 0.1 * np.array([0.6, 0.8]))


class TestReceptiveField:
    @pytest.mark.parametrize("dil, expected", [([1], 2), ([1, 2, 4, 8], 16), ([1, 2, 4, 8] * 2, 31)])
    def test_examples(self, dil, expected):
        assert receptive_field(dil, 2) == expected

    def test_empty(self):
        with pytest.raises(ValueError):
            receptive_field([])

    @settings(max_examples=10)
    @given(dil=st.lists(st.sampled_from([1, 2, 4, 8]), min_size=1, max_size=5), seed=st.integers(0, 999))
    def test_matches_network_probe(self, dil, seed):
        rng = np.random.default_rng(seed)
        net = Sequential([CausalConv(1, 1, dilation=d, rng=rng, dtype=F64) for d in dil])
        n = 64
        base = net(np.zeros((n, 1)))
        reach = 0
        for s in range(n):
            x = np.zeros((n, 1))
            x[s] = 1.0
            if not np.isclose(net(x)[-1, 0], base[-1, 0], atol=0):
                reach = max(reach, n - s)
        assert reach == receptive_field(dil)
