import os
import tempfile
from pathlib import Path
from unittest import mock

import numpy as np
from django.test import SimpleTestCase

from hum.inference import UpliftEstimates
from nncore.gradcheck import check_gradients
from uplift_engine.exceptions import ConfigError, DataError, DenominatorError, DimensionError, FeatureIndexError

from .decision import aggregate_control, comprehensive_score, decide, relative_uplift, value_weights
from .labels import build_labels, proportion_label
from .requests import GROUP_CARDINALITIES, RequestContext, ranking_percentiles, simulate_requests
from .store import ScoreStore, UserScores, score_users, write_decisions
from .weights import (WeightHyperparameters, WeightModel, _loss, load_weight_model, pool_batch,
                      pool_request, predict_weights, save_weight_model, train_weight_model,
                      weight_forward)

SMALL = WeightHyperparameters(weight_embedding_dim=2, weight_experts=2, weight_hidden=4)

DESK = {
    'weight_embedding_dim': 4, 'weight_experts': 2, 'weight_hidden': 8, 'learning_rate': 0.01,
    'desk_batch_size': 64, 'max_epochs': 5, 'early_stop_patience': 10, 'seed': 3,
    'num_responses': 2,
}


def small_model(groups=(3, 4), R=2, seed=0):
    return WeightModel(list(groups), R, SMALL, np.random.default_rng(seed))


class AggregateControlTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(aggregate_control([0.7]), 0.7)
        self.assertEqual(aggregate_control([2.0, 4.0]), 3.0)

    def test_sandwich_random(self):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(500, 3))
        mean = aggregate_control(values)
        self.assertTrue(np.all(values.min(axis=1) <= mean))
        self.assertTrue(np.all(mean <= values.max(axis=1)))

    def test_empty(self):
        with self.assertRaises(DimensionError):
            aggregate_control([])


class RelativeUpliftTests(SimpleTestCase):
    def test_examples(self):
        self.assertEqual(relative_uplift(1.3, 1.3), 0.0)
        self.assertAlmostEqual(relative_uplift(1.2, 1.0), 0.2)

    def test_zero_denominator_names_user(self):
        with self.assertRaises(DenominatorError) as ctx:
            relative_uplift(1.0, 0.0, user_id='u0000042')
        self.assertEqual(ctx.exception.user_id, 'u0000042')

    def test_homogeneity(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            treated, control, c = rng.uniform(0.5, 5), rng.uniform(0.5, 5), rng.uniform(0.1, 10)
            self.assertAlmostEqual(relative_uplift(treated, control),
                                   relative_uplift(c * treated, c * control), places=12)


class ValueWeightTests(SimpleTestCase):
    def test_examples(self):
        np.testing.assert_allclose(value_weights([0.2, 0.2]), [0.5, 0.5])
        np.testing.assert_allclose(value_weights([0.3, 0.1]), [0.75, 0.25])

    def test_degenerate_fallback(self):
        np.testing.assert_allclose(value_weights([0.0, 0.0, 0.0]), [1 / 3] * 3)

    def test_normalization_on_random_requests(self):
        rng = np.random.default_rng(2)
        raw = rng.uniform(0, 1, size=(10000, 3))
        raw[:5] = 0.0
        w = value_weights(raw)
        self.assertTrue(np.all(np.abs(w.sum(axis=1) - 1.0) < 1e-9))
        self.assertTrue(np.all(w >= 0))


class DecideTests(SimpleTestCase):
    def test_single_response(self):
        delta = np.array([[0.3, -0.2]])
        np.testing.assert_allclose(comprehensive_score([1.0], delta), [0.3, -0.2])

    def test_default_threshold_example(self):
        decision = decide([0.5, 0.5], np.array([[0.2], [-0.1]]), sigma=0.0)
        self.assertAlmostEqual(decision.phi[0], 0.05)
        self.assertEqual(decision.enabled, (1,))

    def test_strict_threshold(self):
        decision = decide([1.0], np.array([[0.25, 0.5]]), sigma=0.25)
        self.assertEqual(decision.enabled, (2,))

    def test_top1(self):
        delta = np.array([[0.1, 0.4, 0.4]])
        self.assertEqual(decide([1.0], delta, top1=True).enabled, (2,))
        self.assertEqual(decide([1.0], delta).enabled, (1, 2, 3))

    def test_monotone_in_sigma(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            w = value_weights(rng.uniform(size=2))
            delta = rng.normal(0, 0.3, size=(2, 3))
            previous = None
            for sigma in np.linspace(-1, 1, 21):
                enabled = set(decide(w, delta, sigma).enabled)
                if previous is not None:
                    self.assertTrue(enabled <= previous)
                previous = enabled

    def test_response_permutation(self):
        rng = np.random.default_rng(5)
        raw = rng.uniform(size=3)
        delta = rng.normal(size=(3, 2))
        perm = [2, 0, 1]
        w = value_weights(raw)
        w_perm = value_weights(raw[perm])
        np.testing.assert_allclose(w_perm, w[perm])
        np.testing.assert_allclose(comprehensive_score(w_perm, delta[perm]),
                                   comprehensive_score(w, delta), atol=1e-12)


class ProportionLabelTests(SimpleTestCase):
    def test_seven_three(self):
        percentiles = np.array([[0.9, 0.1]] * 7 + [[0.2, 0.8]] * 3)
        np.testing.assert_allclose(proportion_label(percentiles), [0.7, 0.3])

    def test_one_hot_and_ties(self):
        np.testing.assert_allclose(proportion_label([[0.5, 0.5], [0.4, 0.4]]), [1.0, 0.0])

    def test_no_exposures_skipped(self):
        self.assertIsNone(proportion_label(np.zeros((0, 2))))
        requests = [RequestContext('a', [[0]], np.zeros((0, 2))),
                    RequestContext('b', [[0]], [[0.1, 0.9]])]
        labels, kept, skipped = build_labels(requests, 2)
        self.assertEqual((kept, skipped), ([1], 1))
        np.testing.assert_allclose(labels, [[0.0, 1.0]])

    def test_labels_sum_to_one(self):
        for request in simulate_requests([f"u{i}" for i in range(50)], 3, seed=1):
            self.assertAlmostEqual(proportion_label(request.exposures).sum(), 1.0)


class RequestSimulatorTests(SimpleTestCase):
    def test_shapes_and_ranges(self):
        requests = simulate_requests(['a', 'b'], 2, seed=0, candidates=20, exposures=10)
        for request in requests:
            self.assertEqual([len(g) for g in request.groups], [3, 20, 20])
            self.assertEqual(request.exposures.shape, (10, 2))
            for ids, cardinality in zip(request.groups, GROUP_CARDINALITIES):
                self.assertTrue(np.all((ids >= 0) & (ids < cardinality)))
            self.assertTrue(np.all((request.exposures >= 0) & (request.exposures <= 1)))

    def test_deterministic(self):
        a = simulate_requests(['a', 'b', 'c'], 2, seed=9)
        b = simulate_requests(['a', 'b', 'c'], 2, seed=9)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.exposures, y.exposures)

    def test_percentiles_within_pool(self):
        np.testing.assert_allclose(ranking_percentiles(np.array([[3.0], [1.0], [2.0]]))[:, 0],
                                   [1.0, 0.0, 0.5])

    def test_empty_group_rejected(self):
        with self.assertRaises(DataError):
            RequestContext('a', [[1], []], np.zeros((1, 2)))


class PoolingTests(SimpleTestCase):
    def test_single_items_are_identity(self):
        model = small_model()
        request = RequestContext('a', [[2], [1]], np.zeros((0, 2)))
        pooled = pool_request(request, model).value
        np.testing.assert_allclose(pooled[:2], model.embeddings[0].table.value[2])
        np.testing.assert_allclose(pooled[2:], model.embeddings[1].table.value[1])

    def test_hand_means(self):
        model = small_model()
        model.embeddings[0].table.value = np.array([[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]])
        model.embeddings[1].table.value = np.array([[1.0, 1.0], [3.0, -1.0], [0.0, 0.0], [5.0, 5.0]])
        request = RequestContext('a', [[0, 1], [0, 1]], np.zeros((0, 2)))
        np.testing.assert_allclose(pool_request(request, model).value, [2.0, 3.0, 2.0, 0.0])

    def test_duplicate_shifts_mean(self):
        model = small_model()
        model.embeddings[0].table.value = np.array([[0.0, 0.0], [3.0, 3.0], [0.0, 0.0]])
        once = pool_request(RequestContext('a', [[0, 1], [0]], np.zeros((0, 2))), model).value
        twice = pool_request(RequestContext('a', [[0, 1, 1], [0]], np.zeros((0, 2))), model).value
        self.assertGreater(twice[0], once[0])
        self.assertAlmostEqual(twice[0], 2.0)

    def test_out_of_range_item(self):
        with self.assertRaises(FeatureIndexError):
            pool_request(RequestContext('a', [[5], [0]], np.zeros((0, 2))), small_model())


class WeightForwardTests(SimpleTestCase):
    def test_outputs(self):
        model = small_model(R=3)
        pooled = np.linspace(-1, 1, model.pooled_width)
        out = weight_forward(pooled, model).value
        self.assertEqual(out.shape, (3,))
        self.assertTrue(np.all((out > 0) & (out < 1)))
        np.testing.assert_array_equal(out, weight_forward(pooled, model).value)

    def test_width_mismatch(self):
        with self.assertRaises(DimensionError):
            weight_forward(np.zeros(3), small_model())

    def test_loss_gradient_check(self):
        model = small_model(seed=4)
        requests = [RequestContext(f"u{i}", [[i % 3, (i + 1) % 3], [i % 4]], [[0.2, 0.9]])
                    for i in range(6)]
        labels = np.array([[0.3, 0.7], [0.5, 0.5], [1.0, 0.0], [0.2, 0.8], [0.6, 0.4], [0.0, 1.0]])
        errors = check_gradients(lambda: _loss(model, requests, labels), model.parameters())
        for name, error in errors.items():
            self.assertLess(error, 1e-5, msg=name)

    def test_loss_gradient_check_random_batches(self):
        # 10 Batches zu je 32 simulierten Anfragen, alle Parametergruppen
        for seed in range(10):
            model = WeightModel(GROUP_CARDINALITIES, 2, SMALL, np.random.default_rng(seed))
            requests = simulate_requests([f"u{i}" for i in range(32)], 2, seed=100 + seed)
            labels, kept, _ = build_labels(requests, 2)
            batch = [requests[i] for i in kept]
            errors = check_gradients(lambda: _loss(model, batch, labels), model.parameters())
            self.assertEqual(set(errors), set(model.parameters()))
            for name, error in errors.items():
                self.assertLess(error, 1e-3, msg=f"Seed {seed}: {name}")


class WeightTrainingTests(SimpleTestCase):
    def test_loss_decreases(self):
        requests = simulate_requests([f"u{i}" for i in range(400)], 2, seed=1)
        model = train_weight_model(requests, DESK)
        losses = [h['train_loss'] for h in model.history]
        self.assertEqual(len(losses), 5)
        self.assertLess(losses[-1], losses[0])

    def test_constant_labels_converge(self):
        requests = [RequestContext(f"u{i}", [[i % 13], [i % 10], [i % 8]],
                                   [[0.9, 0.1]] * 7 + [[0.1, 0.9]] * 3) for i in range(200)]
        model = train_weight_model(requests, dict(DESK, max_epochs=40, learning_rate=0.03))
        predicted = predict_weights(requests, model)
        np.testing.assert_allclose(predicted.mean(axis=0), [0.7, 0.3], atol=0.05)

    def test_deterministic(self):
        requests = simulate_requests([f"u{i}" for i in range(60)], 2, seed=2)
        config = dict(DESK, max_epochs=2)
        a = train_weight_model(requests, config).state_dict()
        b = train_weight_model(requests, config).state_dict()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_explicit_batch_size_wins(self):
        requests = simulate_requests([f"u{i}" for i in range(40)], 2, seed=5)
        config = dict(DESK, max_epochs=1, desk_batch_size=1)
        with mock.patch('ddm.weights._loss', wraps=_loss) as loss:
            train_weight_model(requests, config, batch_size=1000)
        # ein Trainings- und ein Validierungsbatch
        self.assertEqual(loss.call_count, 2)
        with mock.patch('ddm.weights._loss', wraps=_loss) as loss:
            train_weight_model(requests, config)
        self.assertEqual(loss.call_count, 40)
        with self.assertRaises(ConfigError):
            train_weight_model(requests, config, batch_size=0)

    def test_checkpoint_round_trip(self):
        requests = simulate_requests([f"u{i}" for i in range(30)], 2, seed=2)
        model = train_weight_model(requests, dict(DESK, max_epochs=1))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'weights.json'
            save_weight_model(model, path)
            loaded = load_weight_model(path)
        np.testing.assert_array_equal(predict_weights(requests, model), predict_weights(requests, loaded))


class ScoreStoreTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def _estimates(self):
        def make(response, treated, control):
            treated, control = np.asarray(treated), np.asarray(control)
            return UpliftEstimates(response, ['a', 'b', 'c'], treated, control, control,
                                   np.zeros((3, 2, 1)))
        return [
            make('usage_time', [[1.2, 0.9], [2.0, 2.0], [1.0, 1.0]],
                 [[1.0, 1.0], [1.0, 3.0], [0.0, 0.0]]),
            make('view_count', [[0.5, 0.7], [1.0, 1.1], [1.0, 1.0]],
                 [[0.6, 0.4], [1.0, 1.0], [1.0, 1.0]]),
        ]

    def test_score_users_skips_zero_control(self):
        scores, skipped = score_users(self._estimates())
        self.assertEqual(skipped, ['c'])
        self.assertEqual([s.user_id for s in scores], ['a', 'b'])
        np.testing.assert_allclose(scores[0].delta[0], [0.2, -0.1])

    def _round_trip(self, name):
        scores, _ = score_users(self._estimates())
        store = ScoreStore(self.tmp / name)
        rows = store.write(scores)
        self.assertEqual(rows, 2 * 2 * 2)
        loaded = store.read()
        for s in scores:
            np.testing.assert_array_equal(loaded[s.user_id].delta, s.delta)
            recomputed = loaded[s.user_id].treated / loaded[s.user_id].control_star[:, None] - 1.0
            np.testing.assert_allclose(recomputed, loaded[s.user_id].delta)

    def test_csv_round_trip(self):
        self._round_trip('scores.csv')

    def test_jsonl_round_trip(self):
        self._round_trip('scores.jsonl')

    def test_refresh_replaces_whole_file(self):
        store = ScoreStore(self.tmp / 'scores.csv')
        first = UserScores('a', np.ones((1, 1)), np.ones(1), np.zeros((1, 1)))
        second = UserScores('b', np.full((1, 1), 2.0), np.ones(1), np.ones((1, 1)))
        store.write([first])
        store.write([second])
        self.assertEqual(set(store.read()), {'b'})
        self.assertEqual([p for p in os.listdir(self.tmp) if p.endswith('.tmp')], [])

    def test_decision_file(self):
        decision = decide([0.5, 0.5], np.array([[0.2, -0.4], [-0.1, 0.0]]))
        path = self.tmp / 'decisions.csv'
        write_decisions([('a', decision)], path)
        lines = path.read_text().strip().split('\n')
        self.assertEqual(lines[0], 'user_id,k,phi,enabled')
        self.assertEqual(lines[1].split(',')[-1], '1')
        self.assertEqual(lines[2].split(',')[-1], '0')
