import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from uplift_engine.exceptions import MetricError

from .export import HEADER_ROWS, export_curve, read_curve
from .uplift import auuc, continuous_adapt, evaluate_treatment, perfect_order, qini

# 3 behandelt, 3 Kontrolle, binär; von Hand ausgerechnet
HAND_SCORES = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4]
HAND_T = [1, 0, 1, 0, 1, 0]
HAND_Y = [1, 0, 0, 1, 1, 0]


def brute_force(kind, scores, t, y, continuous):
    """Vergleichsrechnung in reinem Python: jedes Präfix wird neu aufsummiert"""
    n = len(scores)
    y = [float(v) for v in y]
    if continuous:
        low, high = min(y), max(y)
        y = [(v - low) / (high - low) for v in y]
    binary = all(v in (0.0, 1.0) for v in y)

    def value(prefix):
        nt = sum(1 for i in prefix if t[i] == 1)
        nc = len(prefix) - nt
        yt = 0.0
        yc = 0.0
        for i in prefix:
            if t[i] == 1:
                yt += y[i]
            else:
                yc += y[i]
        if kind == 'qini':
            return yt - yc * nt / nc if nc else yt
        mean_t = yt / nt if nt else 0.0
        mean_c = yc / nc if nc else 0.0
        return (mean_t - mean_c) * len(prefix)

    def area(points):
        return sum((x1 - x0) * (v0 + v1) / 2 for (x0, v0), (x1, v1) in zip(points, points[1:]))

    # sorted ist stabil: Gleichstände behalten die Eingabereihenfolge
    order = sorted(range(n), key=lambda i: -scores[i])
    model = [(0.0, 0.0)] + [(m / n, value(order[:m])) for m in range(1, n + 1)]

    if binary:
        best = ([i for i in range(n) if t[i] == 1 and y[i] == 1]
                + [i for i in range(n) if t[i] == 0 and y[i] == 0]
                + [i for i in range(n) if t[i] == 1 and y[i] == 0]
                + [i for i in range(n) if t[i] == 0 and y[i] == 1])
    else:
        best = (sorted([i for i in range(n) if t[i] == 1], key=lambda i: -y[i])
                + sorted([i for i in range(n) if t[i] == 0], key=lambda i: y[i]))
    perfect = [(0.0, 0.0)] + [(m / n, value(best[:m])) for m in range(1, n + 1)]

    random_area = model[-1][1] / 2
    gap = area(perfect) - random_area
    if abs(gap) < 1e-12:
        return None
    return (area(model) - random_area) / gap


class QiniTests(SimpleTestCase):
    def test_hand_fixture(self):
        _, coefficient = qini(HAND_SCORES, HAND_T, HAND_Y)
        self.assertAlmostEqual(coefficient, 2 / 13, delta=1e-12)

    def test_constant_scores_follow_input_order(self):
        # HAND_SCORES ist absteigend, also dieselbe Reihenfolge wie die Eingabe
        _, coefficient = qini([0.3] * 6, HAND_T, HAND_Y)
        self.assertAlmostEqual(coefficient, 2 / 13, delta=1e-12)

    def test_ties_broken_by_input_order(self):
        curve, coefficient = qini([0.5, 0.5, 0.5, 0.1], [1, 0, 1, 0], [1, 0, 0, 1])
        np.testing.assert_allclose(curve.fractions, [0.0, 0.25, 0.5, 0.75, 1.0])
        np.testing.assert_allclose(curve.values, [0.0, 1.0, 1.0, 1.0, 0.0], atol=1e-12)
        self.assertAlmostEqual(curve.model_area, 0.75, delta=1e-12)
        self.assertAlmostEqual(coefficient, 1.0, delta=1e-12)
        # gleiche Scores, Gleichstand in umgekehrter Eingabereihenfolge
        swapped, _ = qini([0.5, 0.5, 0.5, 0.1], [1, 0, 1, 0], [0, 0, 1, 1])
        self.assertAlmostEqual(swapped.model_area, 0.25, delta=1e-12)

    def test_perfect_ordering_gives_one(self):
        t = np.array([1, 1, 0, 0, 1, 0, 1, 0])
        y = np.array([1, 0, 0, 1, 1, 0, 0, 1], dtype=float)
        order = perfect_order(t.astype(bool), y, binary=True)
        scores = np.empty(8)
        scores[order] = np.arange(8, 0, -1)
        self.assertAlmostEqual(qini(scores, t, y)[1], 1.0, delta=1e-12)
        self.assertAlmostEqual(auuc(scores, t, y)[1], 1.0, delta=1e-12)
        # Vorzeichen dreht sich bei negierten Scores
        self.assertLess(qini(-scores, t, y)[1], 0.0)
        self.assertLess(auuc(-scores, t, y)[1], 0.0)

    def test_curve_shape(self):
        curve, _ = qini(HAND_SCORES, HAND_T, HAND_Y)
        self.assertEqual(curve.fractions[0], 0.0)
        self.assertEqual(curve.values[0], 0.0)
        self.assertEqual(curve.fractions[-1], 1.0)
        self.assertTrue(np.all(np.diff(curve.fractions) > 0))
        self.assertTrue(np.isfinite([curve.model_area, curve.random_area, curve.perfect_area]).all())

    def test_all_treated_or_all_control(self):
        with self.assertRaises(MetricError):
            qini([1, 2, 3], [1, 1, 1], [0, 1, 0])
        with self.assertRaises(MetricError):
            auuc([1, 2, 3], [0, 0, 0], [0, 1, 0])

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = 30
            t = rng.integers(0, 2, n)
            t[:2] = [0, 1]
            y = rng.integers(0, 2, n).astype(float)
            y[:2] = [0, 1]
            scores = rng.normal(size=n)
            for metric in (qini, auuc):
                a = metric(scores, t, y)[1]
                b = metric(np.exp(2 * scores) + 5, t, y)[1]
                self.assertAlmostEqual(a, b, delta=1e-12)


class AuucTests(SimpleTestCase):
    def test_hand_fixture(self):
        _, coefficient = auuc(HAND_SCORES, HAND_T, HAND_Y)
        self.assertAlmostEqual(coefficient, 1 / 25, delta=1e-12)

    def test_constant_scores_follow_input_order(self):
        _, coefficient = auuc(np.zeros(6), HAND_T, HAND_Y)
        self.assertAlmostEqual(coefficient, 1 / 25, delta=1e-12)


class BruteForceTests(SimpleTestCase):
    def _fixtures(self, continuous):
        rng = np.random.default_rng(17 if continuous else 5)
        fixtures = []
        while len(fixtures) < 25:
            n = int(rng.integers(2, 9))
            t = rng.integers(0, 2, n)
            if t.all() or not t.any():
                continue
            y = rng.normal(size=n).round(2) if continuous else rng.integers(0, 2, n)
            if continuous and y.min() == y.max():
                continue
            scores = rng.integers(0, 4, n).astype(float)
            fixtures.append((scores, t, y))
        return fixtures

    def _compare(self, continuous):
        for kind, metric in (('qini', qini), ('auuc', auuc)):
            for scores, t, y in self._fixtures(continuous):
                expected = brute_force(kind, scores.tolist(), t.tolist(), y.tolist(), continuous)
                if expected is None:
                    with self.assertRaises(MetricError):
                        metric(scores, t, y, continuous=continuous)
                    continue
                _, coefficient = metric(scores, t, y, continuous=continuous)
                self.assertAlmostEqual(coefficient, expected, delta=1e-12,
                                       msg=f"{kind} {scores} {t} {y}")

    def test_binary_fixtures(self):
        self._compare(continuous=False)

    def test_continuous_fixtures(self):
        self._compare(continuous=True)


class ContinuousAdaptTests(SimpleTestCase):
    def test_min_max(self):
        adapted = continuous_adapt([2.0, 4.0, 3.0])
        np.testing.assert_allclose(adapted.values, [0.0, 1.0, 0.5])
        self.assertFalse(adapted.is_binary)

    def test_binary_labels_match_binary_path(self):
        for metric in (qini, auuc):
            binary = metric(HAND_SCORES, HAND_T, HAND_Y, continuous=False)[1]
            adapted = metric(HAND_SCORES, HAND_T, HAND_Y, continuous=True)[1]
            self.assertEqual(binary, adapted)

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        t = rng.integers(0, 2, 40)
        t[:2] = [0, 1]
        y = rng.gamma(2.0, size=40)
        scores = rng.normal(size=40)
        for metric in (qini, auuc):
            a = metric(scores, t, y)[1]
            b = metric(scores, t, 3.5 * y - 7.0)[1]
            self.assertAlmostEqual(a, b, delta=1e-9)

    def test_constant_labels(self):
        with self.assertRaises(MetricError):
            continuous_adapt([1.5, 1.5, 1.5])


class EvaluateTreatmentTests(SimpleTestCase):
    def test_restricts_to_treatment_and_control(self):
        t = np.array([0, 1, 2, 0, 2, 1, 2, 0])
        y = np.array([0, 1, 1, 0, 0, 1, 1, 1], dtype=float)
        scores = np.linspace(1, 0, 8)
        report = evaluate_treatment(scores, t, y, k=2, response='visit')
        self.assertEqual(report['n_treated'], 3)
        self.assertEqual(report['n_control'], 3)
        self.assertEqual(report['response'], 'visit')
        rows = (t == 0) | (t == 2)
        self.assertEqual(report['qini'], qini(scores[rows], (t[rows] == 2).astype(int), y[rows])[1])
        self.assertEqual(set(report), {'treatment', 'response', 'qini', 'auuc', 'n_treated', 'n_control'})


class ExportCurveTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.path = Path(self._tmp.name) / 'qini.csv'

    def tearDown(self):
        self._tmp.cleanup()

    def test_round_trip(self):
        curve, _ = qini(HAND_SCORES, HAND_T, HAND_Y)
        export_curve(curve, self.path)
        loaded = read_curve(self.path)
        np.testing.assert_array_equal(loaded.fractions, curve.fractions)
        np.testing.assert_array_equal(loaded.values, curve.values)
        self.assertEqual(loaded.perfect_area, curve.perfect_area)

    def test_layout(self):
        curve, _ = auuc(HAND_SCORES, HAND_T, HAND_Y)
        export_curve(curve, self.path)
        lines = self.path.read_text().strip().split('\n')
        self.assertEqual(len(lines), len(curve) + HEADER_ROWS)
        self.assertEqual(lines[HEADER_ROWS - 1], 'population_fraction,cumulative_uplift')
        self.assertEqual(float(lines[HEADER_ROWS].split(',')[0]), 0.0)
        self.assertEqual(float(lines[-1].split(',')[0]), 1.0)
