import math
import unittest
from unittest import mock

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from pandas.testing import assert_frame_equal

from normalnorm import autodiff
from normalnorm.datasets import synth_dataset
from normalnorm.exceptions import DivergenceError, DomainError, PreconditionError
from normalnorm.nn import SGD, Mlp, MlpSpec, TrainConfig, accuracy, build_mlp, gradient_check, summarize, train
from normalnorm.normalization import GroupingSpec, NormKind


def small_batch(seed, n=16, d=2, classes=2):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, d)), rng.integers(classes, size=n)


class TapeTestCase(unittest.TestCase):
    def test_shared_node_visited_once(self):
        tape = autodiff.Tape()
        x = tape.leaf(np.array([1.0, -2.0, 3.0]))
        calls = []

        def vjp(g):
            calls.append(g.copy())
            return (2.0 * g,)

        doubled = tape._record('double', 2.0 * x.data, (x,), vjp)
        out = autodiff.total(doubled * doubled + doubled)
        tape.backward(out)
        self.assertEqual(1, len(calls))
        assert_allclose(2.0 * (4.0 * x.data + 1.0), x.grad)

    def test_broadcast_gradients(self):
        tape = autodiff.Tape()
        a = tape.leaf(np.ones((4, 3)))
        b = tape.leaf(np.array([1.0, 2.0, 3.0]))
        tape.backward(autodiff.total(a * b + b))
        assert_array_equal(np.tile([1.0, 2.0, 3.0], (4, 1)), a.grad)
        assert_array_equal([8.0, 8.0, 8.0], b.grad)

    def test_non_scalar_needs_seed(self):
        tape = autodiff.Tape()
        x = tape.leaf(np.ones(3))
        with self.assertRaises(PreconditionError):
            tape.backward(autodiff.relu(x))
        other = autodiff.Tape()
        with self.assertRaises(PreconditionError):
            other.backward(autodiff.total(x))


class SoftmaxCrossEntropyTestCase(unittest.TestCase):
    def test_matches_scalar_reference(self):
        logits = np.random.default_rng(0).normal(0.0, 3.0, (5, 4))
        labels = np.array([0, 3, 1, 1, 2])
        expected = 0.0
        for row, label in zip(logits, labels):
            expected -= math.log(math.exp(row[label]) / sum(math.exp(v) for v in row))
        expected /= len(labels)
        tape = autodiff.Tape()
        loss = autodiff.softmax_cross_entropy(tape.leaf(logits), labels)
        self.assertAlmostEqual(expected, float(loss.data), delta=1e-10)

    def test_stable_for_large_logits(self):
        tape = autodiff.Tape()
        logits = tape.leaf(np.array([[1000.0, 0.0], [0.0, 1000.0]]))
        loss = autodiff.softmax_cross_entropy(logits, np.array([0, 0]))
        self.assertAlmostEqual(500.0, float(loss.data), places=9)
        tape.backward(loss)
        self.assertTrue(np.all(np.isfinite(logits.grad)))


class MlpSpecTestCase(unittest.TestCase):
    def test_broadcast_kinds(self):
        spec = MlpSpec((4, 8, 8, 2), 'conventional')
        self.assertEqual((NormKind.CONVENTIONAL,) * 2, spec.norm)
        self.assertEqual((8, 8), spec.hidden_widths)

    def test_invalid(self):
        with self.assertRaises(DomainError):
            MlpSpec((4,))
        with self.assertRaises(DomainError):
            MlpSpec((4, 8, 2), ('normality', 'normality'))
        with self.assertRaises(DomainError):
            MlpSpec((4, 8, 2), 'whitening')
        with self.assertRaises(PreconditionError):
            MlpSpec((4, 8, 2), grouping=GroupingSpec('instance'))
        with self.assertRaises(PreconditionError):
            MlpSpec((4, 6, 2), grouping=GroupingSpec('group', group_size=4))

    def test_dict_round_trip(self):
        spec = MlpSpec((4, 8, 2), ('conventional',), GroupingSpec('group', group_size=4),
                       {'xi': 0.2, 'noise_mode': 'dropout'})
        self.assertEqual(spec, MlpSpec.from_dict(spec.as_dict()))


class BuildMlpTestCase(unittest.TestCase):
    def test_same_seed_same_parameters(self):
        spec = MlpSpec((4, 8, 2))
        for (name_a, a), (name_b, b) in zip(build_mlp(spec, 3).parameters(), build_mlp(spec, 3).parameters()):
            self.assertEqual(name_a, name_b)
            assert_array_equal(a, b)
        self.assertFalse(np.array_equal(build_mlp(spec, 3).weights[0], build_mlp(spec, 4).weights[0]))

    def test_initialization_bounds(self):
        model = build_mlp(MlpSpec((6, 50, 2)), 0)
        self.assertLessEqual(np.abs(model.weights[0]).max(), 1.0)
        assert_array_equal(np.zeros(50), model.biases[0])

    def test_parameter_counts(self):
        self.assertEqual(32 + 8 + 8 + 8 + 16 + 2, build_mlp(MlpSpec((4, 8, 2), 'normality')).num_parameters())
        self.assertEqual(32 + 8 + 8 + 8 + 16 + 2, build_mlp(MlpSpec((4, 8, 2), 'conventional')).num_parameters())
        self.assertEqual(32 + 8 + 16 + 2, build_mlp(MlpSpec((4, 8, 2), 'none')).num_parameters())

    def test_layer_streams(self):
        model = build_mlp(MlpSpec((4, 8, 8, 2)), seed=5)
        self.assertEqual([1, 2], [layer.stream.stream_id for _, layer in model.norm_layers()])
        self.assertEqual({5}, {layer.stream.seed for _, layer in model.norm_layers()})


class TrainConfigTestCase(unittest.TestCase):
    def test_milestones(self):
        config = TrainConfig(lr=1.0, milestones=(5, 2))
        self.assertEqual(1.0, config.lr_at(0))
        self.assertAlmostEqual(0.1, config.lr_at(2))
        self.assertAlmostEqual(0.1, config.lr_at(4))
        self.assertAlmostEqual(0.01, config.lr_at(5))

    def test_lr_step(self):
        config = TrainConfig(lr=1.0, lr_step=3, lr_decay=0.5)
        self.assertEqual([1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.25], [config.lr_at(e) for e in range(7)])

    def test_invalid(self):
        for kwargs in ({'lr': -1.0}, {'momentum': 1.0}, {'batch_size': 1}, {'epochs': 0}, {'lr_decay': 0.0}):
            with self.assertRaises(DomainError):
                TrainConfig(**kwargs)


class SgdTestCase(unittest.TestCase):
    def test_weight_decay_shrinks(self):
        weight = np.array([1.0, -2.0])
        SGD([('w', weight)], momentum=0.0, weight_decay=0.1).step({'w': np.zeros(2)}, lr=0.5)
        assert_allclose([0.95, -1.9], weight)

    def test_momentum(self):
        weight = np.zeros(1)
        optimizer = SGD([('w', weight)], momentum=0.5, weight_decay=0.0)
        optimizer.step({'w': np.ones(1)}, lr=1.0)
        optimizer.step({'w': np.ones(1)}, lr=1.0)
        assert_allclose([-2.5], weight)


class TrainTestCase(unittest.TestCase):
    def setUp(self):
        self.data = synth_dataset('blobs', 400, seed=0)

    def test_blobs_are_learned(self):
        model = build_mlp(MlpSpec((2, 8, 2)), seed=0)
        log = train(model, self.data, TrainConfig(batch_size=32, epochs=5), self.data)
        self.assertGreaterEqual(accuracy(model, self.data), 0.99)
        self.assertEqual(5, len(log.records))
        self.assertEqual(log.records[-1].val_accuracy, log.final_val_accuracy)

    def test_zero_lr_keeps_parameters(self):
        model = build_mlp(MlpSpec((2, 8, 2)), seed=1)
        before = [array.copy() for _, array in model.parameters()]
        train(model, self.data, TrainConfig(lr=0.0, batch_size=64, epochs=2))
        for expected, (_, array) in zip(before, model.parameters()):
            assert_array_equal(expected, array)

    def test_deterministic(self):
        config = TrainConfig(batch_size=32, epochs=2, seed=4)
        first = train(build_mlp(MlpSpec((2, 8, 2)), 4), self.data, config, self.data).to_frame()
        second = train(build_mlp(MlpSpec((2, 8, 2)), 4), self.data, config, self.data).to_frame()
        assert_frame_equal(first, second)

    def test_identity_normality_matches_conventional(self):
        config = TrainConfig(batch_size=32, epochs=2)
        normality = build_mlp(MlpSpec((2, 8, 2), 'normality', layer_options={'alpha': 0.0, 'xi': 0.0}), 0)
        conventional = build_mlp(MlpSpec((2, 8, 2), 'conventional'), 0)
        assert_frame_equal(train(conventional, self.data, config, self.data).to_frame(),
                           train(normality, self.data, config, self.data).to_frame())

    def test_divergence(self):
        model = build_mlp(MlpSpec((2, 8, 2)), seed=0)
        with mock.patch.object(Mlp, 'loss_and_grads', return_value=(float('nan'), {}, [], np.zeros((32, 2)))):
            with self.assertRaises(DivergenceError) as raised:
                train(model, self.data, TrainConfig(batch_size=32, epochs=1))
        self.assertEqual(0, raised.exception.epoch)
        self.assertEqual(0, raised.exception.step)
        self.assertEqual(4, raised.exception.exit_code)

    def test_preconditions(self):
        model = build_mlp(MlpSpec((3, 8, 2)), seed=0)
        with self.assertRaises(PreconditionError):
            train(model, self.data, TrainConfig())

    def test_summarize(self):
        summary = summarize((0, 1), (0.5, 1.0))
        self.assertAlmostEqual(0.75, summary.mean)
        self.assertAlmostEqual(0.25, summary.stderr)
        self.assertEqual(0.0, summarize((0,), (0.5,)).stderr)


class GradientCheckTestCase(unittest.TestCase):
    def test_linear(self):
        features, labels = small_batch(0, d=3)
        self.assertLessEqual(gradient_check(build_mlp(MlpSpec((3, 2)), 0), features, labels), 1e-8)

    def test_conventional(self):
        features, labels = small_batch(1)
        model = build_mlp(MlpSpec((2, 4, 2), 'conventional'), 1)
        self.assertLessEqual(gradient_check(model, features, labels), 1e-5)

    def test_normality_without_noise(self):
        features, labels = small_batch(2)
        model = build_mlp(MlpSpec((2, 4, 2), 'normality', layer_options={'xi': 0.0}), 2)
        self.assertLessEqual(gradient_check(model, features, labels), 1e-4)

    def test_normality_with_frozen_noise(self):
        features, labels = small_batch(3)
        model = build_mlp(MlpSpec((2, 4, 2), 'normality'), 3)
        self.assertLessEqual(gradient_check(model, features, labels), 1e-4)

    def test_layer_grouping(self):
        features, labels = small_batch(4)
        model = build_mlp(MlpSpec((2, 4, 4, 2), 'normality', GroupingSpec('layer')), 4)
        self.assertLessEqual(gradient_check(model, features, labels), 1e-4)

    def test_running_statistics_untouched(self):
        features, labels = small_batch(5)
        model = build_mlp(MlpSpec((2, 4, 2), 'normality'), 5)
        state = model.norms[0].state
        before = (state.running_mu.copy(), state.running_sigma2.copy(), state.running_lambda.copy())
        gradient_check(model, features, labels)
        self.assertEqual(0, state.num_batches_tracked)
        for expected, actual in zip(before, (state.running_mu, state.running_sigma2, state.running_lambda)):
            assert_array_equal(expected, actual)
