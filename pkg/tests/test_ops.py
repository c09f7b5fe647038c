import math

import numpy as np
import pytest
from pydantic import ValidationError

from neural.model import LSTM_FORGET_BIAS, LayerSpec, ModelState, NoForwardCache, init_params
from neural.networks import LiBeamsNet, MissBeamNet
from neural.ops import (
    conv1d_backward,
    conv1d_forward,
    dense_forward,
    dropout,
    lstm_backward,
    lstm_forward,
    mse_loss,
    sigmoid,
)
from neural.optim import EpochOutOfRange, TrainConfig, adam_step, lr_at
from utils.errors import ShapeMismatch
from utils.seeding import make_rng


class TestConv1d:
    def test_libeamsnet_shape(self, rng):
        out = conv1d_forward(rng.normal(size=(4, 3)), rng.normal(size=(6, 4, 2)), np.zeros(6))
        assert out.shape == (6, 2)
        assert out.reshape(-1).size == 12

    def test_sum_kernel(self):
        c, bias = 0.7, 0.25
        out = conv1d_forward(np.full((1, 5), c), np.ones((1, 1, 2)), np.array([bias]))
        np.testing.assert_allclose(out, np.full((1, 4), 2 * c + bias))

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 6))
        out = conv1d_forward(x, np.array([[[1.0, 0.0]]]), np.zeros(1))
        np.testing.assert_array_equal(out, x[:, :5])

    def test_batched_matches_single(self, rng):
        x = rng.normal(size=(3, 4, 5))
        w, b = rng.normal(size=(2, 4, 2)), rng.normal(size=2)
        batched = conv1d_forward(x, w, b)
        for i in range(3):
            np.testing.assert_allclose(batched[i], conv1d_forward(x[i], w, b), atol=1e-14)

    def test_kernel_longer_than_input(self, rng):
        with pytest.raises(ShapeMismatch):
            conv1d_forward(rng.normal(size=(4, 2)), rng.normal(size=(6, 4, 3)), np.zeros(6))

    def test_backward_batch_is_sum_of_samples(self, rng):
        x = rng.normal(size=(3, 4, 5))
        w = rng.normal(size=(2, 4, 2))
        grad = rng.normal(size=(3, 2, 4))
        d_x, d_w, d_b = conv1d_backward(x, w, grad)
        assert d_w.shape == w.shape and d_b.shape == (2,)

        singles = [conv1d_backward(x[i], w, grad[i]) for i in range(3)]
        for i, (dx_i, _, _) in enumerate(singles):
            np.testing.assert_allclose(d_x[i], dx_i, atol=1e-13)
        np.testing.assert_allclose(d_w, sum(s[1] for s in singles), atol=1e-13)
        np.testing.assert_allclose(d_b, sum(s[2] for s in singles), atol=1e-13)

    def test_backward_accepts_several_batch_axes(self, rng):
        x = rng.normal(size=(2, 3, 4, 3))
        w = rng.normal(size=(6, 4, 2))
        grad = rng.normal(size=(2, 3, 6, 2))
        d_x, d_w, d_b = conv1d_backward(x, w, grad)
        flat = conv1d_backward(x.reshape(6, 4, 3), w, grad.reshape(6, 6, 2))
        np.testing.assert_allclose(d_x, flat[0].reshape(x.shape), atol=1e-13)
        np.testing.assert_allclose(d_w, flat[1], atol=1e-13)
        np.testing.assert_allclose(d_b, flat[2], atol=1e-13)


class TestDense:
    def test_identity(self):
        x = np.array([0.3, -1.2, 4.0])
        np.testing.assert_array_equal(dense_forward(x, np.eye(3), np.zeros(3)), x)

    def test_zero_weights(self):
        b = np.array([1.0, -2.0])
        np.testing.assert_array_equal(dense_forward(np.ones(3), np.zeros((2, 3)), b), b)

    def test_hand_example(self):
        out = dense_forward(np.array([2.0, 3.0]), np.array([[1.0, 1.0], [1.0, -1.0]]), np.zeros(2))
        np.testing.assert_array_equal(out, [5.0, -1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            dense_forward(np.ones(3), np.ones((2, 4)), np.zeros(2))


class TestLSTM:
    def test_zero_parameters(self, rng):
        h, _ = lstm_forward(rng.normal(size=(3, 4)), np.zeros((20, 4)), np.zeros((20, 5)), np.zeros(20))
        np.testing.assert_array_equal(h, np.zeros(5))

    def test_hidden_bound(self, rng):
        hidden = 8
        x = rng.normal(size=(16, 3, 4))
        h, _ = lstm_forward(
            x, rng.normal(size=(4 * hidden, 4)),
            rng.normal(size=(4 * hidden, hidden)), rng.normal(size=4 * hidden),
        )
        assert h.shape == (16, hidden)
        assert np.all(np.abs(h) < 1.0)

    def test_single_step_by_hand(self):
        x = 0.5
        w = np.array([[0.4], [-0.3], [0.8], [1.2]])   # i, f, o, g
        b = np.array([0.1, 1.0, -0.2, 0.05])
        h, _ = lstm_forward(np.array([[x]]), w, np.zeros((4, 1)), b)

        def sig(z):
            return 1.0 / (1.0 + math.exp(-z))

        i = sig(0.4 * x + 0.1)
        o = sig(0.8 * x - 0.2)
        g = math.tanh(1.2 * x + 0.05)
        c = i * g                     # c0 = 0, so the forget gate drops out
        assert h[0] == pytest.approx(o * math.tanh(c), abs=1e-14)

    def test_empty_sequence(self):
        with pytest.raises(ShapeMismatch):
            lstm_forward(np.zeros((1, 0, 4)), np.zeros((8, 4)), np.zeros((8, 2)), np.zeros(8))

    def test_backward_batch_is_sum_of_samples(self, rng):
        hidden = 3
        w = rng.normal(size=(4 * hidden, 4))
        u = rng.normal(size=(4 * hidden, hidden))
        b = rng.normal(size=4 * hidden)
        x = rng.normal(size=(5, 3, 4))
        grad = rng.normal(size=(5, hidden))

        _, cache = lstm_forward(x, w, u, b)
        d_x, d_w, d_u, d_b = lstm_backward(cache, w, u, grad)
        assert d_x.shape == x.shape

        totals = [np.zeros_like(w), np.zeros_like(u), np.zeros_like(b)]
        for i in range(5):
            _, cache_i = lstm_forward(x[i : i + 1], w, u, b)
            dx_i, dw_i, du_i, db_i = lstm_backward(cache_i, w, u, grad[i : i + 1])
            np.testing.assert_allclose(d_x[i], dx_i[0], atol=1e-12)
            for total, part in zip(totals, (dw_i, du_i, db_i)):
                total += part
        for got, expected in zip((d_w, d_u, d_b), totals):
            np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_sigmoid_is_stable(self):
        out = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


class TestDropout:
    def test_inference_is_identity(self, rng):
        x = rng.normal(size=100)
        assert dropout(x, 0.2, training_mode=False, rng=rng) is x

    def test_rate_zero(self, rng):
        x = rng.normal(size=100)
        np.testing.assert_array_equal(dropout(x, 0.0, True, rng), x)
        np.testing.assert_array_equal(dropout(x, 0.0, False, rng), x)

    def test_monte_carlo(self):
        x = np.linspace(0.5, 1.5, 1_000_000)
        out = dropout(x, 0.2, True, make_rng(3))
        zero = out == 0.0
        assert 0.198 <= zero.mean() <= 0.202
        np.testing.assert_allclose(out[~zero], x[~zero] * 1.25, rtol=1e-15)
        assert out.mean() == pytest.approx(x.mean(), rel=0.01)

    def test_bad_rate(self, rng):
        with pytest.raises(ValueError):
            dropout(np.ones(3), 1.0, True, rng)


class TestLoss:
    def test_equal(self):
        loss, grad = mse_loss(np.array([0.3, 0.4]), np.array([0.3, 0.4]))
        assert loss == 0.0
        np.testing.assert_array_equal(grad, [0.0, 0.0])

    def test_hand_example(self):
        loss, grad = mse_loss(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        assert loss == 1.0
        np.testing.assert_array_equal(grad, [1.0, 1.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mse_loss(np.zeros(2), np.zeros(3))


def _single_tensor_state(values):
    spec = LayerSpec(name="d", kind="dense", in_features=len(values), out_features=1)
    return ModelState(specs=[spec], params={"d.W": np.array([values], dtype=float), "d.b": np.zeros(1)})


class TestAdam:
    def test_first_step(self):
        state = _single_tensor_state([0.5, -0.25, 1.0])
        before = state.params["d.W"].copy()
        g = np.array([[0.3, -2.0, 1e-3]])
        adam_step(state, {"d.W": g}, lr=0.001)
        np.testing.assert_allclose(state.params["d.W"] - before, -0.001 * g / (np.abs(g) + 1e-8), rtol=1e-9)
        assert state.step == 1

    def test_zero_gradients(self):
        state = _single_tensor_state([0.5, -0.25])
        before = state.params["d.W"].copy()
        for _ in range(5):
            adam_step(state, {"d.W": np.zeros((1, 2)), "d.b": np.zeros(1)}, lr=0.01)
        np.testing.assert_array_equal(state.params["d.W"], before)

    def test_tensors_are_independent(self, rng):
        gw, gb = rng.normal(size=(1, 3)), rng.normal(size=1)
        together = _single_tensor_state([1.0, 2.0, 3.0])
        adam_step(together, {"d.W": gw, "d.b": gb}, lr=0.01)
        alone_w = _single_tensor_state([1.0, 2.0, 3.0])
        adam_step(alone_w, {"d.W": gw}, lr=0.01)
        alone_b = _single_tensor_state([1.0, 2.0, 3.0])
        adam_step(alone_b, {"d.b": gb}, lr=0.01)
        np.testing.assert_array_equal(together.params["d.W"], alone_w.params["d.W"])
        np.testing.assert_array_equal(together.params["d.b"], alone_b.params["d.b"])

    def test_shape_mismatch(self):
        state = _single_tensor_state([1.0, 2.0])
        with pytest.raises(ShapeMismatch):
            adam_step(state, {"d.W": np.zeros(2)}, lr=0.01)

    def test_matches_textbook_update_over_steps(self, rng):
        state = _single_tensor_state([0.5, -0.25, 1.0, 2.0])
        p = state.params["d.W"].copy()
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        for t in range(1, 6):
            g = rng.normal(size=p.shape)
            adam_step(state, {"d.W": g}, lr=0.01)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            p = p - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            np.testing.assert_allclose(state.params["d.W"], p, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(state.m["d.W"], m, rtol=1e-12)
        np.testing.assert_allclose(state.v["d.W"], v, rtol=1e-12)

    def test_work_buffer_is_reused(self, rng):
        state = _single_tensor_state([1.0, 2.0, 3.0])
        adam_step(state, {"d.W": rng.normal(size=(1, 3))}, lr=0.01)
        buf = state.scratch["d.W"]
        adam_step(state, {"d.W": rng.normal(size=(1, 3))}, lr=0.01)
        assert state.scratch["d.W"] is buf


class TestSchedule:
    @pytest.mark.parametrize("epoch, lr", [(1, 0.001), (50, 0.001), (51, 0.0001), (100, 0.0001)])
    def test_step_decay(self, epoch, lr):
        assert lr_at(TrainConfig(), epoch) == pytest.approx(lr, rel=1e-12)

    def test_single_discontinuity(self):
        config = TrainConfig()
        rates = [lr_at(config, e) for e in range(1, 101)]
        jumps = [e for e in range(1, 100) if rates[e] != rates[e - 1]]
        assert jumps == [50]

    @pytest.mark.parametrize("epoch", [0, 101])
    def test_out_of_range(self, epoch):
        with pytest.raises(EpochOutOfRange):
            lr_at(TrainConfig(), epoch)

    def test_short_run_defaults_decay_epoch(self):
        assert TrainConfig(epochs=5).decay_epoch == 5
        assert TrainConfig().decay_epoch == 50

    def test_explicit_decay_after_last_epoch(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=5, decay_epoch=10)


class TestModel:
    def test_layer_spec_kernel_too_long(self):
        with pytest.raises(ValidationError):
            LayerSpec(name="c", kind="conv1d", in_channels=4, filters=6, kernel_size=4, input_length=3)

    @pytest.mark.parametrize("rate", [-0.1, 1.0])
    def test_layer_spec_dropout_rate(self, rate):
        with pytest.raises(ValidationError):
            LayerSpec(name="d", kind="dropout", rate=rate)

    def test_init(self):
        specs = MissBeamNet.layer_specs(n_available=2, hidden_size=10) + [
            LayerSpec(name="c", kind="conv1d", in_channels=4, filters=6, kernel_size=2, input_length=3)
        ]
        params = init_params(specs, make_rng(0))
        np.testing.assert_array_equal(params["lstm.b"][10:20], LSTM_FORGET_BIAS)
        assert not np.any(params["lstm.b"][:10]) and not np.any(params["lstm.b"][20:])
        assert np.all(np.abs(params["lstm.U"]) <= math.sqrt(1 / 10))
        assert np.all(np.abs(params["out.W"]) <= math.sqrt(1 / 12))
        assert np.all(np.abs(params["c.W"]) <= math.sqrt(1 / 8))
        assert not np.any(params["out.b"])

    def test_init_is_seeded(self):
        specs = LiBeamsNet.layer_specs(window=3, n_available=2)
        a, b = init_params(specs, make_rng(5)), init_params(specs, make_rng(5))
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_backward_needs_forward(self):
        net = MissBeamNet.build(MissBeamNet.layer_specs(n_available=2, hidden_size=4), make_rng(0))
        net.train()
        with pytest.raises(NoForwardCache):
            net.backward(np.zeros((1, 2)))

    def test_inference_forward_leaves_no_cache(self, rng):
        net = LiBeamsNet.build(LiBeamsNet.layer_specs(window=3, n_available=2), make_rng(0))
        net.eval()
        net.forward(rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 2)))
        with pytest.raises(NoForwardCache):
            net.backward(np.zeros((2, 4)))

    @pytest.mark.parametrize("network", ["libeamsnet", "missbeamnet"])
    def test_explicit_mode_leaves_flag_alone(self, rng, network):
        if network == "libeamsnet":
            net = LiBeamsNet.build(LiBeamsNet.layer_specs(window=3, n_available=2), make_rng(0))
        else:
            net = MissBeamNet.build(MissBeamNet.layer_specs(n_available=2, hidden_size=4), make_rng(0))
        past, available = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 2))

        net.train()
        first = net.predict(past, available)
        assert net.state.training
        np.testing.assert_array_equal(net.predict(past, available), first)
        with pytest.raises(NoForwardCache):
            net.backward(np.zeros_like(first))

        net.eval()
        net.forward(past, available, rng=make_rng(1), training=True)
        assert not net.state.training
        net.backward(np.zeros_like(first))

    def test_state_shape_check(self):
        spec = LayerSpec(name="d", kind="dense", in_features=2, out_features=1)
        with pytest.raises(ShapeMismatch):
            ModelState(specs=[spec], params={"d.W": np.zeros((2, 2)), "d.b": np.zeros(1)})
