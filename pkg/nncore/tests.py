import math

import numpy as np
from django.test import SimpleTestCase

from uplift_engine.exceptions import (ContractError, DimensionError, FeatureIndexError,
                                      GraphStateError, NumericalError)

from .autograd import Parameter, Tensor, backward, segment_mean
from .functional import dense_forward, embed_lookup, kl_divergence, mse, softmax
from .gradcheck import check_gradients
from .layers import MLP, Dense, Embedding
from .optim import Adam, AdamState, PlateauSchedule, adam_step, plateau_update


class DenseForwardTests(SimpleTestCase):
    def test_identity_weights(self):
        out = dense_forward([1.0, 1.0], np.eye(2), np.zeros(2))
        np.testing.assert_allclose(out.value, [1.0, 1.0])

    def test_relu_clamps_negative(self):
        out = dense_forward([-3.0], [[1.0]], [0.0], activation='relu')
        np.testing.assert_allclose(out.value, [0.0])

    def test_hand_arithmetic(self):
        out = dense_forward([1.0, 2.0], [[1.0, 1.0]], [0.5])
        np.testing.assert_allclose(out.value, [3.5])

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            dense_forward([1.0, 2.0, 3.0], np.eye(2), np.zeros(2))

    def test_batch_rows(self):
        out = dense_forward(np.ones((4, 2)), [[1.0, 1.0]], [0.5], activation='sigmoid')
        self.assertEqual(out.shape, (4, 1))
        self.assertTrue(np.all((out.value > 0) & (out.value < 1)))


class SoftmaxTests(SimpleTestCase):
    def test_symmetric(self):
        np.testing.assert_allclose(softmax([0.0, 0.0]).value, [0.5, 0.5])

    def test_constant_shift(self):
        for c in (-50.0, 0.0, 3.0, 700.0):
            np.testing.assert_allclose(softmax([c, c, c]).value, [1 / 3] * 3)

    def test_known_values(self):
        np.testing.assert_allclose(softmax([1.0, 2.0]).value, [0.26894, 0.73106], atol=1e-5)

    def test_empty(self):
        with self.assertRaises(DimensionError):
            softmax([])

    def test_sum_and_shift_invariance_random(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            v = rng.normal(0, 20, size=rng.integers(1, 12))
            s = softmax(v).value
            self.assertLess(abs(s.sum() - 1.0), 1e-9)
            self.assertTrue(np.all(s > 0) or np.max(np.abs(v)) > 300)
            np.testing.assert_allclose(softmax(v + rng.normal() * 10).value, s, atol=1e-12)


class KLDivergenceTests(SimpleTestCase):
    def test_identical_is_zero(self):
        self.assertEqual(kl_divergence([0.5, 0.5], [0.5, 0.5]).item(), 0.0)

    def test_closed_form(self):
        self.assertAlmostEqual(kl_divergence([1.0, 0.0], [0.5, 0.5]).item(), math.log(2), places=6)

    def test_floor_keeps_value_finite(self):
        value = kl_divergence([0.5, 0.5], [1.0, 0.0]).item()
        self.assertTrue(math.isfinite(value))
        q = np.array([1.0, 1e-8]) / (1.0 + 1e-8)
        expected = 0.5 * math.log(0.5 / q[0]) + 0.5 * math.log(0.5 / q[1])
        self.assertAlmostEqual(value, expected, places=9)

    def test_nonnegative_and_asymmetric(self):
        rng = np.random.default_rng(3)
        asymmetric = 0
        for _ in range(100):
            p = rng.dirichlet(np.ones(4))
            q = rng.dirichlet(np.ones(4))
            forward = kl_divergence(p, q).item()
            self.assertGreaterEqual(forward, 0.0)
            self.assertEqual(kl_divergence(p, p).item(), 0.0)
            asymmetric += abs(forward - kl_divergence(q, p).item()) > 1e-9
        self.assertGreater(asymmetric, 0)

    def test_length_mismatch(self):
        with self.assertRaises(DimensionError):
            kl_divergence([0.5, 0.5], [1.0])

    def test_not_a_distribution(self):
        with self.assertRaises(ContractError):
            kl_divergence([0.5, 0.6], [0.5, 0.5])


class MSETests(SimpleTestCase):
    def test_equal_is_zero(self):
        self.assertEqual(mse([1.0, 2.0], [1.0, 2.0]).item(), 0.0)

    def test_hand_value(self):
        self.assertAlmostEqual(mse([0.0, 1.0], [1.0, 1.0]).item(), 0.5)

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=10), rng.normal(size=10)
        self.assertAlmostEqual(mse(a, b).item(), mse(b, a).item(), places=12)

    def test_length_mismatch(self):
        with self.assertRaises(DimensionError):
            mse([1.0], [1.0, 2.0])


class EmbeddingTests(SimpleTestCase):
    def test_matches_one_hot_product(self):
        table = np.arange(6, dtype=float).reshape(3, 2)
        rows = embed_lookup(table, [2, 0]).value
        one_hot = np.eye(3)[[2, 0]]
        np.testing.assert_allclose(rows, one_hot @ table)

    def test_equal_ids_equal_rows(self):
        emb = Embedding(5, 32, np.random.default_rng(0))
        rows = emb([3, 3]).value
        self.assertEqual(rows.shape, (2, 32))
        np.testing.assert_array_equal(rows[0], rows[1])

    def test_out_of_range_names_feature(self):
        with self.assertRaises(FeatureIndexError) as ctx:
            embed_lookup(np.zeros((3, 2)), [[0, 5]], feature_names=['region', 'activity'])
        self.assertIn('activity', str(ctx.exception))


class BackwardTests(SimpleTestCase):
    def test_constant_loss_zero_gradients(self):
        w = Parameter(np.ones(3), name='w')
        backward(Tensor(3.0))
        np.testing.assert_array_equal(w.grad, np.zeros(3))

    def test_second_backward_is_state_error(self):
        w = Parameter(np.ones((1, 2)), name='w')
        loss = (Tensor([[1.0, 2.0]]) * w).sum()
        backward(loss)
        with self.assertRaises(GraphStateError):
            backward(loss)

    def test_leaf_without_forward(self):
        w = Parameter(np.ones(1), name='w')
        with self.assertRaises(GraphStateError):
            backward(w)

    def test_segment_mean_pools_and_backpropagates(self):
        w = Parameter(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), name='w')
        pooled = segment_mean(w, [0, 0, 1], 2)
        np.testing.assert_allclose(pooled.value, [[2.0, 3.0], [5.0, 6.0]])
        backward(pooled.sum())
        np.testing.assert_allclose(w.grad, [[0.5, 0.5], [0.5, 0.5], [1.0, 1.0]])
        with self.assertRaises(DimensionError):
            segment_mean(w, [0, 0, 2], 3)

    def test_dense_mse_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        net = MLP([5, 8, 1], rng)
        x = rng.normal(size=(32, 5))
        y = rng.normal(size=(32, 1))
        errors = check_gradients(lambda: mse(net(x), y), net.parameters())
        self.assertLess(max(errors.values()), 1e-3)

    def test_softmax_kl_chain_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        gate_a = Dense(4, 3, rng, name='a')
        gate_b = Dense(4, 3, rng, name='b')
        x = rng.normal(size=(32, 4))

        def loss():
            za = softmax(gate_a(x))
            zb = softmax(gate_b(x))
            target = (za + zb) * 0.5
            return kl_divergence(za, target).mean() + kl_divergence(zb, target).mean()

        params = {**gate_a.parameters(), **{f"b.{k}": v for k, v in gate_b.parameters().items()}}
        errors = check_gradients(loss, params)
        self.assertLess(max(errors.values()), 1e-3)

    def test_unused_branch_gets_exact_zero(self):
        rng = np.random.default_rng(2)
        used = Dense(3, 1, rng, name='used')
        unused = Dense(3, 1, rng, name='unused')
        x = rng.normal(size=(4, 3))
        backward(mse(used(x), np.zeros((4, 1))))
        np.testing.assert_array_equal(unused.weight.grad, 0.0)
        self.assertTrue(np.any(used.weight.grad != 0.0))


class AdamTests(SimpleTestCase):
    def test_zero_gradient_is_identity(self):
        p = Parameter(np.array([1.0, -2.0]), name='p')
        state = AdamState(lr=0.001)
        adam_step({'p': p}, {'p': np.zeros(2)}, state)
        np.testing.assert_array_equal(p.value, [1.0, -2.0])
        self.assertEqual(state.step, 1)

    def test_first_step_magnitude(self):
        p = Parameter(np.array([1.0]), name='p')
        state = adam_step({'p': p}, {'p': np.array([1.0])}, AdamState(lr=0.001))
        self.assertAlmostEqual(p.value[0], 0.999, places=6)
        self.assertEqual(state.step, 1)

    def test_non_finite_gradient_names_parameter(self):
        p = Parameter(np.array([1.0]), name='tower.weight')
        with self.assertRaises(NumericalError) as ctx:
            adam_step({'tower.weight': p}, {'tower.weight': np.array([np.nan])}, AdamState(lr=0.001))
        self.assertEqual(ctx.exception.parameter, 'tower.weight')
        self.assertEqual(p.value[0], 1.0)

    def test_step_counter_increases(self):
        p = Parameter(np.array([1.0]), name='p')
        opt = Adam({'p': p}, lr=0.01)
        steps = []
        for _ in range(3):
            p.grad = np.array([0.5])
            opt.step()
            steps.append(opt.state.step)
        self.assertEqual(steps, [1, 2, 3])

    def test_default_learning_rate_from_settings(self):
        from django.conf import settings
        self.assertEqual(settings.UPLIFT_DEFAULTS['learning_rate'], 0.001)


class PlateauTests(SimpleTestCase):
    def _run(self, losses, patience=2):
        schedule = PlateauSchedule(lr=1.0, patience=patience, factor=0.6)
        rates = [plateau_update(schedule, loss) for loss in losses]
        return schedule, rates

    def test_improving_keeps_rate(self):
        schedule, rates = self._run([1.0, 0.9, 0.8])
        self.assertEqual(rates, [1.0, 1.0, 1.0])

    def test_reduction_after_patience(self):
        schedule, rates = self._run([1.0, 1.1, 1.2])
        self.assertEqual(rates[:2], [1.0, 1.0])
        self.assertAlmostEqual(rates[2], 0.6)

    def test_counter_resets_on_improvement(self):
        schedule, rates = self._run([1.0, 1.1, 0.9, 1.0, 1.1])
        self.assertEqual(schedule.reductions, 1)
        self.assertAlmostEqual(rates[-1], 0.6)

    def test_non_increasing_rates(self):
        rng = np.random.default_rng(0)
        schedule, rates = self._run(list(rng.uniform(size=50)))
        self.assertTrue(all(b <= a for a, b in zip(rates, rates[1:])))
        for a, b in zip(rates, rates[1:]):
            if b < a:
                self.assertAlmostEqual(b / a, 0.6)

    def test_invalid_patience(self):
        with self.assertRaises(ContractError):
            PlateauSchedule(lr=0.1, patience=0)
