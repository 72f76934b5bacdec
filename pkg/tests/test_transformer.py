
import numpy as np
import pytest

from latentflow import construct as cs
from latentflow.flow_matching import loss_and_grads
from latentflow.metrics import measure_lipschitz
from latentflow.tensor import ContractError, ShapeError
from latentflow.transformer import (
    RescaledVelocityNet,
    TransformerNet,
    TransformerSpec,
    attention_layer,
    clip_operator_norms,
    default_layout,
    embed_input,
    feedforward_layer,
    flatten_tokens,
    init_transformer,
    load_json,
    operator_norm,
    patchify,
    save_json,
    velocity_forward,
    velocity_spec,
)


def random_net(seed=0, **kw):
    params = dict(d_in=4, d_out=2, d_patch=2, tokens=2, n_layers=2, heads=2, d_k=3, d_v=3, d_ff=5)
    params.update(kw)
    return init_transformer(TransformerSpec(**params), np.random.default_rng(seed))


class TestSpec:
    def test_d_model(self):
        assert TransformerSpec(d_in=3, d_out=1, d_patch=3, heads=3, d_v=4).d_model == 12

    def test_patch_layout_must_cover_input(self):
        with pytest.raises(ContractError):
            TransformerSpec(d_in=5, d_out=1, d_patch=2, tokens=2)

    def test_dimensions_positive(self):
        with pytest.raises(ContractError):
            TransformerSpec(d_in=2, d_out=0, d_patch=2)

    def test_default_layout(self):
        assert default_layout(9) == (9, 1)
        assert default_layout(10) == (5, 2)
        assert default_layout(11) == (6, 2)


class TestPatchify:
    def test_two_tokens(self):
        X = patchify(np.array([1.0, 2.0, 3.0, 4.0]), 2, 2).data
        np.testing.assert_array_equal(X, [[1, 3], [2, 4]])

    def test_single_token(self):
        x = np.array([0.3, -1.0, 2.0])
        np.testing.assert_array_equal(patchify(x, 3, 1).data[:, 0], x)

    def test_round_trip(self):
        x = np.random.default_rng(1).normal(size=(7, 6))
        np.testing.assert_array_equal(flatten_tokens(patchify(x, 3, 2)).data, x)

    def test_mismatch(self):
        with pytest.raises(ShapeError):
            patchify(np.zeros(5), 2, 2)


class TestEmbed:
    def test_constant_bias(self):
        X = np.random.default_rng(0).normal(size=(2, 3))
        Z = embed_input(X, np.zeros((4, 5)), np.array([1.0, 2.0, 3.0, 4.0])).data
        np.testing.assert_array_equal(Z, np.tile([[1.0], [2.0], [3.0], [4.0]], (1, 3)))

    def test_position_block(self):
        A = np.zeros((3, 5))
        A[:, 2:] = np.eye(3)
        Z = embed_input(np.ones((2, 3)), A, np.zeros(3)).data
        np.testing.assert_array_equal(Z, np.eye(3))

    def test_per_column_recomputation(self):
        rng = np.random.default_rng(2)
        X, A, b = rng.normal(size=(2, 3)), rng.normal(size=(4, 5)), rng.normal(size=4)
        Z = embed_input(X, A, b).data
        for j in range(3):
            np.testing.assert_allclose(Z[:, j], A @ np.concatenate([X[:, j], np.eye(3)[j]]) + b, rtol=1e-14)


class TestAttention:
    def test_zero_output_projection_is_identity(self):
        rng = np.random.default_rng(0)
        Z = rng.normal(size=(6, 3))
        out = attention_layer(Z, rng.normal(size=(2, 2, 6)), rng.normal(size=(2, 2, 6)), rng.normal(size=(2, 3, 6)), np.zeros((2, 6, 3)))
        np.testing.assert_array_equal(out.data, Z)

    def test_product_construction_value(self):
        lay = cs.Layout(1, 2)
        Z = cs.initial_state(lay, np.array([[0.0, 0.0]]), b1=3.0)
        Z[lay.a] = [2.0, 0.5]
        w = cs.build_multiplier(lay, 0, 13.0)
        out = attention_layer(Z, w.W_Q, w.W_K, w.W_V, w.W_O).data
        assert out[lay.c, 0] == 19.0

    def test_single_token_is_gated_cubic(self):
        rng = np.random.default_rng(4)
        z = rng.normal(size=(5, 1))
        WQ, WK, WV, WO = rng.normal(size=(2, 5)), rng.normal(size=(2, 5)), rng.normal(size=(3, 5)), rng.normal(size=(5, 3))
        out = attention_layer(z, WQ, WK, WV, WO).data
        q, k = WQ @ z, WK @ z
        expected = z + WO @ WV @ z * (q.T @ k).item()
        np.testing.assert_allclose(out, expected, rtol=1e-13)

    def test_matches_direct_multihead_sum(self):
        rng = np.random.default_rng(5)
        Z = rng.normal(size=(6, 3))
        WQ, WK = rng.normal(size=(2, 2, 6)), rng.normal(size=(2, 2, 6))
        WV, WO = rng.normal(size=(2, 3, 6)), rng.normal(size=(2, 6, 3))
        expected = Z.copy()
        for s in range(2):
            S = (WK[s] @ Z).T @ (WQ[s] @ Z)
            gate = (S == S.max(axis=0)).astype(float)
            gate /= gate.sum(axis=0)
            expected += WO[s] @ (WV[s] @ Z) @ (S * gate)
        np.testing.assert_allclose(attention_layer(Z, WQ, WK, WV, WO).data, expected, rtol=1e-13)


class TestFeedForward:
    def test_zero_second_layer(self):
        rng = np.random.default_rng(0)
        Y = rng.normal(size=(4, 2))
        out = feedforward_layer(Y, rng.normal(size=(6, 4)), rng.normal(size=6), np.zeros((4, 6)), np.zeros(4))
        np.testing.assert_array_equal(out.data, Y)

    def test_accumulator_construction(self):
        lay = cs.Layout(1, 2)
        Y = cs.initial_state(lay, np.array([[0.2, 0.4]]))
        Y[lay.a], Y[lay.acc], Y[lay.c] = 0.7, 0.1, 0.9
        ff = cs.build_accumulator(lay, 1.0, 0.0, "move")
        out = feedforward_layer(Y, ff.W1, ff.b1, ff.W2, ff.b2).data
        np.testing.assert_allclose(out[lay.acc], 0.9, rtol=0, atol=1e-15)
        assert np.all(out[lay.a] == 0) and np.all(out[lay.c] == 0)
        np.testing.assert_array_equal(out[: lay.acc - 1], Y[: lay.acc - 1])

    def test_direct_recomputation(self):
        rng = np.random.default_rng(8)
        Y, W1, b1, W2, b2 = rng.normal(size=(4, 3)), rng.normal(size=(5, 4)), rng.normal(size=5), rng.normal(size=(4, 5)), rng.normal(size=4)
        expected = Y + W2 @ np.maximum(W1 @ Y + b1[:, None], 0) + b2[:, None]
        np.testing.assert_allclose(feedforward_layer(Y, W1, b1, W2, b2).data, expected, rtol=1e-13)


class TestForward:
    def test_zero_network_emits_bias(self):
        spec = TransformerSpec(d_in=2, d_out=2, d_patch=2, bound=1.0)
        net = TransformerNet(spec)
        net.params["b_out"] = np.array([3.0, 4.0])
        np.testing.assert_allclose(net(np.array([0.1, 0.2])), [0.6, 0.8])

    def test_monomial_network_end_to_end(self):
        net, _ = cs.build_monomial_net(cs.Layout(1, 2), (2, 1))
        assert net(np.array([0.5, 0.25]))[0] == 0.0625

    def test_output_bound(self):
        net = random_net(1, bound=0.5)
        x = np.random.default_rng(2).normal(scale=3, size=(1000, 4))
        assert np.all(np.linalg.norm(net(x), axis=1) <= 0.5 + 1e-12)

    def test_batch_matches_single(self):
        net = random_net(3)
        x = np.random.default_rng(4).normal(size=(5, 4))
        batch = net(x)
        for i in range(5):
            np.testing.assert_allclose(net(x[i]), batch[i], rtol=1e-14)

    def test_continuity(self):
        net = random_net(5)
        rng = np.random.default_rng(6)
        x = rng.uniform(0, 1, size=(1000, 4))
        delta = rng.normal(size=(1000, 4))
        delta *= 1e-7 / np.linalg.norm(delta, axis=1, keepdims=True)
        L, _ = measure_lipschitz(net, np.zeros(4), np.ones(4), pairs=2000, seed=0)
        change = np.linalg.norm(net(x + delta) - net(x), axis=1)
        assert np.all(change <= 10 * L * 1e-7)

    def test_json_round_trip(self, tmp_path):
        net = random_net(7, bound=2.0, gamma=3.0)
        path = tmp_path / "net.json"
        save_json(net, path)
        back = load_json(path)
        assert back.spec == net.spec
        for k in net.params:
            np.testing.assert_array_equal(back.params[k], net.params[k])
        x = np.random.default_rng(0).normal(size=(3, 4))
        np.testing.assert_array_equal(back(x), net(x))

    def test_rejects_wrong_shapes(self):
        net = random_net()
        params = dict(net.params)
        params["A_in"] = np.zeros((2, 2))
        with pytest.raises(ShapeError):
            TransformerNet(net.spec, params)

    def test_nonzero_count(self):
        spec = TransformerSpec(d_in=1, d_out=1, d_patch=1, n_layers=0)
        net = TransformerNet(spec)
        net.params["b_out"][0] = 1.0
        assert net.nonzero_count() == 1


class TestVelocityNet:
    def make(self, radius=1.5, horizon=0.9, dim=2):
        inner = init_transformer(velocity_spec(dim, d_ff=8), np.random.default_rng(0))
        return RescaledVelocityNet(inner, dim, radius, horizon)

    def test_time_range(self):
        v = self.make()
        with pytest.raises(ContractError):
            velocity_forward(v, np.zeros(2), 0.95)
        with pytest.raises(ContractError):
            velocity_forward(v, np.zeros(2), -0.1)

    def test_projection_idempotence(self):
        v = self.make()
        x = np.array([[5.0, -7.0], [0.3, 9.0]])
        np.testing.assert_array_equal(v(x, 0.4), v(np.clip(x, -1.5, 1.5), 0.4))

    def test_constant_along_exit_rays(self):
        v = self.make()
        base = np.array([1.5, 0.2])
        outs = [v(base + np.array([s, 0.0]), 0.3) for s in (0.0, 0.5, 3.0)]
        for o in outs[1:]:
            np.testing.assert_array_equal(o, outs[0])

    def test_unit_box_corner(self):
        v = self.make(radius=1.0)
        inp = v.inner_inputs(np.ones((1, 2)), np.array([0.45]))
        np.testing.assert_array_equal(inp[0, :2], [1.0, 1.0])
        assert inp[0, 2] == 0.5

    def test_padding_for_two_tokens(self):
        inner = init_transformer(velocity_spec(9, d_ff=8), np.random.default_rng(0))
        assert (inner.spec.d_patch, inner.spec.tokens) == (5, 2)
        v = RescaledVelocityNet(inner, 9, 1.0, 0.9)
        assert v(np.zeros(9), 0.1).shape == (9,)

    def test_gammas(self):
        inner = init_transformer(velocity_spec(1, gamma=4.0), np.random.default_rng(0))
        v = RescaledVelocityNet(inner, 1, 2.0, 0.8)
        assert v.gamma_x == 1.0 and v.gamma_t == 5.0

    def test_lipschitz_probe(self):
        v = self.make()
        gx, _ = measure_lipschitz(v, -1.5 * np.ones(2), 1.5 * np.ones(2), pairs=2000, seed=1, horizon=0.9)
        rng = np.random.default_rng(9)
        x1, x2 = rng.uniform(-1.5, 1.5, size=(2, 200, 2))
        t = rng.uniform(0, 0.9, size=200)
        ratio = np.linalg.norm(v(x1, t) - v(x2, t), axis=1) / np.linalg.norm(x1 - x2, axis=1)
        assert ratio.max() <= gx * 1.05

    def test_round_trip(self, tmp_path):
        v = self.make()
        save_json(v, tmp_path / "v.json")
        back = load_json(tmp_path / "v.json")
        x = np.random.default_rng(0).normal(size=(4, 2))
        np.testing.assert_array_equal(back(x, 0.2), v(x, 0.2))


class TestLipschitzClipping:
    def test_operator_norm_matches_svd(self):
        A = np.random.default_rng(0).normal(size=(6, 4))
        assert operator_norm(A, iters=200) == pytest.approx(np.linalg.svd(A, compute_uv=False)[0], rel=1e-6)

    def test_clip_caps_norms(self):
        net = random_net(0)
        for k in net.params:
            net.params[k] = net.params[k] * 10
        clip_operator_norms(net, 1.0, iters=10)
        for k, arr in net.params.items():
            mats = arr if arr.ndim == 3 else [arr] if arr.ndim == 2 else []
            for m in mats:
                assert operator_norm(m, iters=10) <= 1.0 + 1e-9


def test_tiny_net_loss_gradients_match_fd():
    spec = TransformerSpec(d_in=2, d_out=1, d_patch=2, n_layers=1, heads=2, d_k=2, d_v=2, d_ff=4)
    assert spec.d_model == 4
    inner = init_transformer(spec, np.random.default_rng(3))
    v = RescaledVelocityNet(inner, 1, 2.0, 0.9)
    rng = np.random.default_rng(4)
    inputs = v.inner_inputs(rng.normal(size=(16, 1)), rng.uniform(0, 0.9, size=16))
    labels = rng.normal(size=(16, 1))
    _, grads = loss_and_grads(v, inputs, labels)

    def loss_at(params):
        out = TransformerNet(spec, params)(inputs)
        return float(((out - labels) ** 2).sum(axis=1).mean())

    h = 1e-6
    for name, arr in inner.params.items():
        for idx in np.ndindex(arr.shape):
            plus = {k: a.copy() for k, a in inner.params.items()}
            minus = {k: a.copy() for k, a in inner.params.items()}
            plus[name][idx] += h
            minus[name][idx] -= h
            fd = (loss_at(plus) - loss_at(minus)) / (2 * h)
            got = grads[name][idx]
            assert abs(got - fd) <= 1e-4 * max(abs(fd), 1e-3), (name, idx, got, fd)
