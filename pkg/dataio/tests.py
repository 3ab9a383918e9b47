import os
import tempfile
from pathlib import Path

import numpy as np
from django.conf import settings
from django.test import SimpleTestCase

from nncore.layers import Embedding
from uplift_engine.exceptions import DataError, FeatureIndexError

from .discretize import discretize_apply, discretize_fit, fit_schema
from .loaders import criteo_schema, load_criteo, load_csv, load_train_test, read_table, write_table
from .schema import (CATEGORICAL, CONTINUOUS, Dataset, DatasetSchema, FeatureSpec,
                     dump_schema, load_schema, schema_hash)
from .splits import split
from .synthetic import generate_synthetic_rct, read_truth, write_truth


def _schema(K=2):
    return DatasetSchema(
        features=(FeatureSpec('region', CATEGORICAL, cardinality=3),
                  FeatureSpec('usage_7d', CONTINUOUS, boundaries=(1.0, 2.0))),
        num_treatments=K,
        response_names=('usage_time',))


class TempDirMixin:
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write(self, name, text):
        path = self.tmp / name
        path.write_text(text, encoding='utf-8')
        return path


class DiscretizeTests(SimpleTestCase):
    def test_quartiles(self):
        boundaries = discretize_fit(np.arange(1, 101), 4)
        np.testing.assert_allclose(boundaries, [25.5, 50.5, 75.5])

    def test_constant_column(self):
        with self.assertLogs('dataio.discretize', level='WARNING'):
            boundaries = discretize_fit([3.0] * 10, 5)
        self.assertEqual(boundaries, [])
        np.testing.assert_array_equal(discretize_apply([3.0, 3.0], boundaries), [0, 0])

    def test_clamping(self):
        boundaries = [1.0, 2.0, 3.0]
        np.testing.assert_array_equal(discretize_apply([-100.0, 100.0], boundaries), [0, 3])

    def test_training_values_in_range_and_monotone(self):
        rng = np.random.default_rng(0)
        column = rng.exponential(size=1000)
        boundaries = discretize_fit(column, 100)
        ids = discretize_apply(column, boundaries)
        self.assertTrue(np.all((ids >= 0) & (ids < 100)))
        order = np.argsort(column)
        self.assertTrue(np.all(np.diff(ids[order]) >= 0))

    def test_embedding_dimension_default(self):
        self.assertEqual(settings.UPLIFT_DEFAULTS['embedding_dim'], 32)
        emb = Embedding(4, settings.UPLIFT_DEFAULTS['embedding_dim'], np.random.default_rng(0))
        self.assertEqual(emb([0, 1, 2]).shape, (3, 32))


class LoadCsvTests(TempDirMixin, SimpleTestCase):
    HEADER = 'user_id,region,usage_7d,treatment,usage_time\n'

    def test_three_rows(self):
        path = self.write('small.csv', self.HEADER + 'a,0,0.5,0,1.0\nb,1,1.5,1,2.0\nc,2,9.0,2,3.5\n')
        dataset = load_csv(path, _schema())
        self.assertEqual(len(dataset), 3)
        self.assertEqual(dataset[1].x, (1, 1))
        self.assertEqual(dataset[2].x, (2, 2))
        self.assertEqual(dataset[2].t, 2)
        self.assertEqual(dataset[0].y, (1.0,))

    def test_treatment_out_of_range(self):
        path = self.write('bad.csv', self.HEADER + 'a,0,0.5,0,1.0\nb,1,1.5,3,2.0\n')
        with self.assertRaises(DataError) as ctx:
            load_csv(path, _schema(K=2))
        self.assertEqual(ctx.exception.row, 3)

    def test_missing_column(self):
        path = self.write('missing.csv', 'user_id,region,treatment,usage_time\na,0,0,1.0\n')
        with self.assertRaises(DataError):
            load_csv(path, _schema())

    def test_non_numeric_cell(self):
        path = self.write('nan.csv', self.HEADER + 'a,0,abc,0,1.0\n')
        with self.assertRaises(DataError) as ctx:
            load_csv(path, _schema())
        self.assertEqual(ctx.exception.row, 2)

    def test_categorical_out_of_range(self):
        path = self.write('cat.csv', self.HEADER + 'a,7,0.5,0,1.0\n')
        with self.assertRaises(DataError):
            load_csv(path, _schema())

    def test_feature_index_error_names_feature(self):
        with self.assertRaises(FeatureIndexError) as ctx:
            Dataset(['a'], [[5, 0]], [0], [[1.0]], schema=_schema())
        self.assertIn('region', str(ctx.exception))

    def test_criteo_layout(self):
        header = ','.join([f'f{i}' for i in range(12)] + ['treatment', 'conversion', 'visit', 'exposure'])
        rows = [','.join(['0.5'] * 12 + ['1', '0', '1', '1']),
                ','.join(['1.5'] * 12 + ['0', '0', '0', '0'])]
        path = self.write('criteo.csv', header + '\n' + '\n'.join(rows) + '\n')
        table, schema = load_criteo(path)
        self.assertEqual(len(schema.features), 12)
        self.assertEqual(schema.K, 1)
        self.assertEqual(schema.response_names, ('visit',))
        self.assertEqual(table.responses[:, 0].tolist(), [1.0, 0.0])

    def test_reserialization_is_byte_stable(self):
        rct = generate_synthetic_rct(50, seed=4)
        first = self.tmp / 'first.csv'
        second = self.tmp / 'second.csv'
        write_table(rct.table, rct.schema, first)
        write_table(read_table(first, rct.schema), rct.schema, second)
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_train_test_files(self):
        train = self.write('train.csv', self.HEADER + 'a,0,0.5,1,1.0\nb,0,0.7,1,1.0\n')
        test = self.write('test.csv', self.HEADER + 'c,1,0.5,0,1.0\n')
        train_table, test_table = load_train_test(train, test, _schema())
        self.assertEqual((len(train_table), len(test_table)), (2, 1))

    def test_schema_round_trip(self):
        path = self.tmp / 'schema.json'
        dump_schema(_schema(), path)
        loaded = load_schema(path)
        self.assertEqual(loaded, _schema())
        self.assertEqual(schema_hash(loaded), schema_hash(_schema()))


class SplitTests(SimpleTestCase):
    def _dataset(self, n):
        return Dataset([f'u{i}' for i in range(n)], np.zeros((n, 1)), np.zeros(n), np.zeros((n, 1)))

    def test_split_sizes_follow_configured_ratios(self):
        parts = split(self._dataset(10), (0.8, 0.1, 0.1), seed=1)
        self.assertEqual([len(p) for p in parts], [8, 1, 1])

    def test_deterministic(self):
        a = split(self._dataset(100), seed=9)
        b = split(self._dataset(100), seed=9)
        for x, y in zip(a, b):
            self.assertEqual(x.user_ids, y.user_ids)

    def test_disjoint_and_exhaustive(self):
        parts = split(self._dataset(57), seed=3)
        ids = [set(p.user_ids) for p in parts]
        self.assertEqual(set.union(*ids), {f'u{i}' for i in range(57)})
        self.assertEqual(sum(len(s) for s in ids), 57)

    def test_empty(self):
        with self.assertRaises(DataError):
            split(self._dataset(0))


class SyntheticRCTTests(TempDirMixin, SimpleTestCase):
    def test_noise_free_control_equals_baseline(self):
        rct = generate_synthetic_rct(500, seed=2, noise_sd=0.0)
        control = rct.table.treatment == 0
        np.testing.assert_allclose(rct.table.responses[control], rct.truth.mu[control])

    def test_treatment_counts_uniform(self):
        n, K = 30000, 2
        rct = generate_synthetic_rct(n, K=K, seed=5)
        counts = np.bincount(rct.table.treatment, minlength=K + 1)
        for c in counts:
            self.assertLess(abs(c - n / (K + 1)) / (n / (K + 1)), 0.05)

    def test_monte_carlo_consistency(self):
        rct = generate_synthetic_rct(100000, K=2, R=2, seed=13, noise_sd=0.1)
        t, y = rct.table.treatment, rct.table.responses
        for k in (1, 2):
            for r in range(2):
                treated, control = y[t == k, r], y[t == 0, r]
                diff = treated.mean() - control.mean()
                se = np.sqrt(treated.var(ddof=1) / treated.size + control.var(ddof=1) / control.size)
                expected = rct.truth.tau[:, r, k - 1].mean()
                self.assertLess(abs(diff - expected), 3 * se, msg=f"k={k}, r={r}")

    def test_heterogeneous_mirror_structure(self):
        rct = generate_synthetic_rct(2000, K=2, R=2, seed=1)
        tau = rct.truth.tau
        # Behandlung 1: entgegengesetzte Vorzeichen über die Responses
        self.assertTrue(np.all(np.sign(tau[:, 0, 0]) == -np.sign(tau[:, 1, 0])))
        # Behandlung 2 spiegelt Behandlung 1
        self.assertTrue(np.all(np.sign(tau[:, 0, 1]) == -np.sign(tau[:, 0, 0])))
        self.assertTrue(0.4 < np.mean(tau[:, 0, 0] > 0) < 0.6)

    def test_truth_sidecar_round_trip(self):
        rct = generate_synthetic_rct(20, K=2, R=2, seed=0)
        write_truth(rct.truth, self.tmp / 'truth.csv', self.tmp / 'baseline.csv')
        lines = (self.tmp / 'truth.csv').read_text().strip().split('\n')
        self.assertEqual(len(lines) - 1, 20 * 2 * 2)
        loaded = read_truth(self.tmp / 'truth.csv', self.tmp / 'baseline.csv')
        np.testing.assert_array_equal(loaded.tau, rct.truth.tau)
        np.testing.assert_array_equal(loaded.mu, rct.truth.mu)

    def test_fit_on_training_split(self):
        rct = generate_synthetic_rct(1000, seed=3)
        train, _, _ = split(rct.table, seed=3)
        fitted = fit_schema(rct.schema, train, num_bins=10)
        self.assertTrue(fitted.is_fitted)
        dataset = rct.table.discretize(fitted)
        self.assertEqual(dataset.x.shape, (1000, 10))
        self.assertTrue(np.all(dataset.x[:, 5:] < 10))
