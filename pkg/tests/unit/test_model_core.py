# Copyright 2025 Canonical Ltd.
# See LICENSE file for licensing details.

import math
import struct
import tempfile
import unittest
from pathlib import Path

import numpy as np
from parameterized import parameterized

from constants import MODEL_MAGIC
from errors import ModelFormatError, NonFiniteError, ValidationError
from model_core import (
    Attention,
    AttentionParams,
    BiLstm,
    Conv1d,
    Dense,
    Lstm,
    LstmCellParams,
    OptimizerState,
    Rnn,
    attention,
    check_finite,
    clip_gradients,
    dropout,
    dropout_backward,
    load_parameters,
    lstm_forward,
    mse_loss,
    named_rng,
    optimizer_step,
    save_parameters,
    sigmoid,
    softmax,
)

from .helpers import gradient_errors

STEPS, BATCH, WIDTH, HIDDEN = 4, 2, 3, 3


def _inputs(seed=0, shape=(STEPS, BATCH, WIDTH)):
    return np.random.default_rng(seed).normal(size=shape)


class TestNumerics(unittest.TestCase):
    @parameterized.expand([
        ("uniform", [0.0, 0.0, 0.0], [1 / 3, 1 / 3, 1 / 3]),
        ("two", [1.0, 2.0], [1 / (1 + math.e), math.e / (1 + math.e)]),
        ("large", [1000.0, 0.0], [1.0, 0.0]),
    ])
    def test_softmax(self, _, x, expected):
        np.testing.assert_allclose(softmax(np.array(x)), expected, atol=1e-12)

    def test_softmax_shift_invariance(self):
        x = _inputs(1, (7,))
        np.testing.assert_allclose(softmax(x + 123.4), softmax(x), atol=1e-12)

    def test_softmax_empty(self):
        with self.assertRaises(ValidationError):
            softmax(np.array([]))

    def test_sigmoid_extremes(self):
        np.testing.assert_allclose(sigmoid(np.array([-1000.0, 0.0, 1000.0])), [0.0, 0.5, 1.0])

    def test_check_finite(self):
        with self.assertRaises(NonFiniteError) as ctx:
            check_finite(np.array([1.0, np.nan]), "decoder.forward")
        self.assertEqual(ctx.exception.operation, "decoder.forward")

    def test_mse_perfect_prediction(self):
        loss, grad = mse_loss(np.ones((3, 2)), np.ones((3, 2)))
        self.assertEqual(loss, 0.0)
        np.testing.assert_array_equal(grad, 0.0)

    def test_mse_shape_mismatch(self):
        with self.assertRaises(ValidationError):
            mse_loss(np.ones(3), np.ones(4))

    def test_named_streams_are_independent(self):
        self.assertEqual(named_rng(3, "dropout").random(), named_rng(3, "dropout").random())
        self.assertNotEqual(named_rng(3, "dropout").random(), named_rng(3, "shuffling").random())
        self.assertNotEqual(named_rng(3, "dropout", 1).random(), named_rng(3, "dropout", 2).random())


class TestDense(unittest.TestCase):
    def test_scalar_weight_gradient(self):
        layer = Dense("fc", 1, 1)
        params = {"fc.W": np.array([[0.7]]), "fc.b": np.array([0.0])}
        x, target = np.array([[2.0]]), np.array([[3.0]])
        y, cache = layer.forward(params, x)
        _, dy = mse_loss(y, target)
        grads = {}
        layer.backward(params, grads, dy, cache)
        self.assertAlmostEqual(grads["fc.W"][0, 0], 2.0 * (1.4 - 3.0) * 2.0, places=12)

    def test_width_mismatch(self):
        layer = Dense("fc", 3, 2)
        with self.assertRaises(ValidationError):
            layer.forward(layer.initialize(named_rng(0, "initialization")), np.ones((2, 4)))

    def test_infinite_input(self):
        layer = Dense("fc", 1, 1)
        with self.assertRaises(NonFiniteError):
            layer.forward(layer.initialize(named_rng(0, "initialization")), np.array([[np.inf]]))


class TestLstm(unittest.TestCase):
    def test_zero_weights(self):
        cell = LstmCellParams(np.zeros((2, 12)), np.zeros((3, 12)), np.zeros(12))
        hidden, (h, c) = lstm_forward(cell, _inputs(2, (5, 1, 2)))
        np.testing.assert_array_equal(hidden, 0.0)
        np.testing.assert_array_equal(h, 0.0)
        np.testing.assert_array_equal(c, 0.0)

    def test_single_step_by_hand(self):
        w_input = np.array([[0.5, -0.3, 0.8, 1.2]])
        cell = LstmCellParams(w_input, np.array([[0.1, 0.2, 0.3, 0.4]]), np.zeros(4))
        hidden, (h, c) = lstm_forward(cell, np.ones((1, 1, 1)))

        def logistic(z):
            return 1.0 / (1.0 + math.exp(-z))

        expected_c = logistic(0.5) * math.tanh(1.2)
        expected_h = logistic(0.8) * math.tanh(expected_c)
        self.assertAlmostEqual(c[0, 0], expected_c, places=12)
        self.assertAlmostEqual(hidden[0, 0, 0], expected_h, places=12)
        self.assertAlmostEqual(h[0, 0], expected_h, places=12)

    def test_initial_state_is_used(self):
        cell = LstmCellParams(np.zeros((1, 4)), np.zeros((1, 4)), np.zeros(4))
        _, (_, c) = lstm_forward(cell, np.zeros((1, 1, 1)), (np.zeros((1, 1)), np.ones((1, 1))))
        self.assertAlmostEqual(c[0, 0], 0.5, places=12)

    @parameterized.expand([
        ("recurrent", lambda: LstmCellParams(np.zeros((2, 12)), np.zeros((3, 8)), np.zeros(12))),
        ("bias", lambda: LstmCellParams(np.zeros((2, 12)), np.zeros((3, 12)), np.zeros(8))),
    ])
    def test_inconsistent_shapes(self, _, build):
        with self.assertRaises(ValidationError):
            build()

    def test_input_width_mismatch(self):
        cell = LstmCellParams(np.zeros((2, 12)), np.zeros((3, 12)), np.zeros(12))
        with self.assertRaises(ValidationError):
            lstm_forward(cell, np.zeros((4, 1, 3)))

    def test_layer_matches_functional_form(self):
        layer = Lstm("enc", WIDTH, HIDDEN)
        params = layer.initialize(named_rng(1, "initialization"))
        x = _inputs(3)
        hidden, (h, c), _ = layer.forward(params, x)
        expected, (h2, c2) = lstm_forward(layer.cell(params), x)
        np.testing.assert_allclose(hidden, expected)
        np.testing.assert_allclose(h, h2)
        np.testing.assert_allclose(c, c2)
        np.testing.assert_array_equal(params["enc.b"][HIDDEN : 2 * HIDDEN], 1.0)


class TestGradients(unittest.TestCase):
    """Analytic gradients agree with central finite differences."""

    def _check(self, loss, params, grads):
        errors = gradient_errors(loss, params, grads)
        for key, error in errors.items():
            self.assertLess(error, 1e-4, msg=key)

    def test_dense(self):
        layer = Dense("fc", WIDTH, 2)
        params = {**layer.initialize(named_rng(0, "initialization")), "x": _inputs(0)}
        weights = _inputs(10, (STEPS, BATCH, 2))

        def loss(p):
            return float(np.sum(layer.forward(p, p["x"])[0] * weights))

        y, cache = layer.forward(params, params["x"])
        grads = {}
        grads["x"] = layer.backward(params, grads, weights, cache)
        self._check(loss, params, grads)

    def test_lstm(self):
        layer = Lstm("enc", WIDTH, HIDDEN)
        params = {
            **layer.initialize(named_rng(1, "initialization")),
            "x": _inputs(1),
            "h0": _inputs(2, (BATCH, HIDDEN)),
            "c0": _inputs(3, (BATCH, HIDDEN)),
        }
        w_seq, w_h, w_c = _inputs(11, (STEPS, BATCH, HIDDEN)), _inputs(12, (BATCH, HIDDEN)), _inputs(13, (BATCH, HIDDEN))

        def loss(p):
            hidden, (h, c), _ = layer.forward(p, p["x"], p["h0"], p["c0"])
            return float(np.sum(hidden * w_seq) + np.sum(h * w_h) + np.sum(c * w_c))

        _, _, caches = layer.forward(params, params["x"], params["h0"], params["c0"])
        grads = {}
        grads["x"], grads["h0"], grads["c0"] = layer.backward(params, grads, w_seq, w_h, w_c, caches)
        self._check(loss, params, grads)

    def test_rnn(self):
        layer = Rnn("enc", WIDTH, HIDDEN)
        params = {**layer.initialize(named_rng(2, "initialization")), "x": _inputs(4)}
        params["enc.b"] = _inputs(5, (HIDDEN,))
        w_seq, w_h = _inputs(14, (STEPS, BATCH, HIDDEN)), _inputs(15, (BATCH, HIDDEN))

        def loss(p):
            hidden, h, _ = layer.forward(p, p["x"])
            return float(np.sum(hidden * w_seq) + np.sum(h * w_h))

        _, _, caches = layer.forward(params, params["x"])
        grads = {}
        grads["x"], _ = layer.backward(params, grads, w_seq, w_h, caches)
        self._check(loss, params, grads)

    def test_bilstm(self):
        layer = BiLstm("enc", WIDTH, HIDDEN)
        params = {**layer.initialize(named_rng(3, "initialization")), "x": _inputs(6)}
        weights = _inputs(16, (STEPS, BATCH, 2 * HIDDEN))

        def loss(p):
            return float(np.sum(layer.forward(p, p["x"])[0] * weights))

        out, caches = layer.forward(params, params["x"])
        self.assertEqual(out.shape, (STEPS, BATCH, 2 * HIDDEN))
        grads = {}
        grads["x"] = layer.backward(params, grads, weights, caches)
        self._check(loss, params, grads)

    def test_conv1d(self):
        layer = Conv1d("conv", WIDTH, 2, kernel=2)
        params = {**layer.initialize(named_rng(4, "initialization")), "x": _inputs(7, (5, BATCH, WIDTH))}
        weights = _inputs(17, (4, BATCH, 2))

        def loss(p):
            return float(np.sum(layer.forward(p, p["x"])[0] * weights))

        y, cache = layer.forward(params, params["x"])
        self.assertEqual(y.shape, (4, BATCH, 2))
        grads = {}
        grads["x"] = layer.backward(params, grads, weights, cache)
        self._check(loss, params, grads)

    def test_attention(self):
        layer = Attention("attn", HIDDEN, 2, attn_size=4)
        params = {
            **layer.initialize(named_rng(5, "initialization")),
            "s": _inputs(8, (BATCH, HIDDEN)),
            "hidden": _inputs(9, (STEPS, BATCH, 2)),
        }
        weights = _inputs(18, (BATCH, 2))

        def loss(p):
            return float(np.sum(layer.forward(p, p["s"], p["hidden"])[1] * weights))

        _, _, cache = layer.forward(params, params["s"], params["hidden"])
        grads = {}
        grads["s"], grads["hidden"] = layer.backward(params, grads, weights, cache)
        self._check(loss, params, grads)


class TestAttention(unittest.TestCase):
    def test_uniform_scores(self):
        hidden = _inputs(1, (5, 2, 3))
        params = AttentionParams(np.ones((5, 4)), np.zeros(4), np.zeros(4))
        weights, context = attention(np.zeros((2, 2)), hidden, params)
        np.testing.assert_allclose(weights, 0.2)
        np.testing.assert_allclose(context, hidden.mean(axis=0), atol=1e-12)

    def test_saturated_scores(self):
        hidden = np.zeros((3, 1, 1))
        hidden[2] = 1.0
        params = AttentionParams(np.array([[0.0], [10.0]]), np.zeros(1), np.array([100.0]))
        weights, context = attention(np.zeros((1, 1)), hidden, params)
        np.testing.assert_allclose(weights[:, 0], [0.0, 0.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(context, [[1.0]], atol=1e-12)

    @parameterized.expand([(seed,) for seed in range(5)])
    def test_weights_sum_to_one(self, seed):
        layer = Attention("attn", 3, 2, attn_size=4)
        params = layer.initialize(named_rng(seed, "initialization"))
        weights, _, _ = layer.forward(params, _inputs(seed, (2, 3)), _inputs(seed + 50, (6, 2, 2)))
        self.assertTrue(np.all(weights >= 0))
        np.testing.assert_allclose(weights.sum(axis=0), 1.0, atol=1e-12)

    def test_empty_sequence(self):
        params = AttentionParams(np.ones((2, 1)), np.zeros(1), np.ones(1))
        with self.assertRaises(ValidationError):
            attention(np.zeros((1, 1)), np.zeros((0, 1, 1)), params)

    def test_mismatched_widths(self):
        with self.assertRaises(ValidationError):
            AttentionParams(np.ones((2, 3)), np.zeros(2), np.ones(3))


class TestConv1d(unittest.TestCase):
    def test_sequence_shorter_than_kernel(self):
        layer = Conv1d("conv", 2, 1, kernel=5)
        with self.assertRaises(ValidationError):
            layer.forward(layer.initialize(named_rng(0, "initialization")), np.zeros((4, 1, 2)))

    def test_moving_sum(self):
        layer = Conv1d("conv", 1, 1, kernel=3)
        params = {"conv.W": np.ones((3, 1)), "conv.b": np.zeros(1)}
        y, _ = layer.forward(params, np.arange(5.0).reshape(5, 1, 1))
        np.testing.assert_allclose(y[:, 0, 0], [3.0, 6.0, 9.0])


class TestOptimizer(unittest.TestCase):
    def test_zero_gradient_keeps_parameters(self):
        params = {"w": np.array([1.0, -2.0])}
        updated = optimizer_step(OptimizerState(), params, {"w": np.zeros(2)})
        np.testing.assert_array_equal(updated["w"], params["w"])

    def test_missing_gradient_counts_as_zero(self):
        params = {"w": np.array([1.0]), "u": np.array([2.0])}
        updated = optimizer_step(OptimizerState(), params, {"w": np.array([1.0])})
        np.testing.assert_array_equal(updated["u"], params["u"])

    def test_first_step_moves_by_learning_rate(self):
        state = OptimizerState(learning_rate=0.01)
        updated = optimizer_step(state, {"w": np.array([1.0, 1.0])}, {"w": np.array([0.3, -50.0])})
        np.testing.assert_allclose(updated["w"], [0.99, 1.01], atol=1e-7)
        self.assertEqual(state.step, 1)

    def test_quadratic_converges(self):
        state = OptimizerState(learning_rate=0.1)
        params = {"w": np.array([0.0])}
        for _ in range(2000):
            params = optimizer_step(state, params, {"w": 2.0 * (params["w"] - 3.0)})
        self.assertAlmostEqual(float(params["w"][0]), 3.0, delta=1e-3)

    def test_shape_mismatch(self):
        with self.assertRaises(ValidationError):
            optimizer_step(OptimizerState(), {"w": np.zeros(2)}, {"w": np.zeros(3)})

    def test_clip_gradients(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped = clip_gradients(grads, 1.0)
        np.testing.assert_allclose([clipped["a"][0], clipped["b"][0]], [0.6, 0.8])
        self.assertIs(clip_gradients(grads, 10.0), grads)
        self.assertIs(clip_gradients(grads, 0.0), grads)


class TestDropout(unittest.TestCase):
    def test_inactive(self):
        x = _inputs(0)
        for rate, training in [(0.0, True), (0.5, False)]:
            y, mask = dropout(x, rate, training, named_rng(0, "dropout"))
            self.assertIs(y, x)
            self.assertIsNone(mask)

    @parameterized.expand([("one", 1.0), ("negative", -0.1)])
    def test_invalid_rate(self, _, rate):
        with self.assertRaises(ValidationError):
            dropout(np.ones(3), rate, True, named_rng(0, "dropout"))

    def test_training_needs_generator(self):
        with self.assertRaises(ValidationError):
            dropout(np.ones(3), 0.5, True)

    def test_kept_fraction_and_scale(self):
        x = np.ones(100_000)
        y, mask = dropout(x, 0.5, True, named_rng(0, "dropout"))
        kept = y > 0
        self.assertAlmostEqual(kept.mean(), 0.5, delta=0.01)
        np.testing.assert_array_equal(y[kept], 2.0)
        np.testing.assert_array_equal(dropout_backward(np.ones_like(x), mask), y)


class TestSerialization(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.path = Path(self.tmp.name) / "model.bin"
        self.params = {
            "enc.Wx": _inputs(0, (3, 8)),
            "enc.b": np.arange(8.0),
            "scale": np.array(2.5),
        }
        save_parameters(self.path, self.params, {"family": "seq2seq", "horizon": 10})

    def test_round_trip(self):
        params, config = load_parameters(self.path)
        self.assertEqual(list(params), list(self.params))
        for key, value in self.params.items():
            np.testing.assert_array_equal(params[key], value)
        self.assertEqual(config, {"family": "seq2seq", "horizon": 10})

    def test_wrong_magic(self):
        self.path.write_bytes(b"NOTAMODEL" + self.path.read_bytes())
        with self.assertRaises(ModelFormatError):
            load_parameters(self.path)

    def test_unknown_version(self):
        data = bytearray(self.path.read_bytes())
        struct.pack_into("<I", data, len(MODEL_MAGIC), 99)
        self.path.write_bytes(bytes(data))
        with self.assertRaises(ModelFormatError):
            load_parameters(self.path)

    @parameterized.expand([(cut,) for cut in (10, 40, 100, 20)])
    def test_truncated(self, cut):
        self.path.write_bytes(self.path.read_bytes()[:-cut])
        with self.assertRaises(ModelFormatError):
            load_parameters(self.path)

    def test_trailing_bytes(self):
        self.path.write_bytes(self.path.read_bytes() + b"\x00")
        with self.assertRaises(ModelFormatError):
            load_parameters(self.path)
