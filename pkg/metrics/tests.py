import numpy as np
from django.test import SimpleTestCase

from fl_engine.history import ClientRecord, RoundHistory, RoundRecord

from .fairness import AccuracyProfile, UndefinedCorrelation, aggregate_runs, cf_coefficient, pearson, summarize


def hand_pearson(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    dx, dy = x - x.mean(), y - y.mean()
    return float(dx @ dy / np.sqrt((dx @ dx) * (dy @ dy)))


class PearsonTests(SimpleTestCase):
    def test_identity(self):
        x = np.array([0.3, 0.1, 0.9, 0.4])
        self.assertAlmostEqual(pearson(x, x), 1.0, delta=1e-12)

    def test_negative_affine(self):
        x = np.array([1.0, 2.0, 5.0])
        self.assertAlmostEqual(pearson(x, -2 * x + 7), -1.0, delta=1e-12)

    def test_three_points(self):
        self.assertAlmostEqual(pearson([1, 2, 3], [1, 2, 4]), 0.98198, places=5)
        self.assertAlmostEqual(pearson([1, 2, 3], [1, 2, 4]), hand_pearson([1, 2, 3], [1, 2, 4]), delta=1e-10)

    def test_constant_vector(self):
        with self.assertRaisesMessage(UndefinedCorrelation, 'undefined correlation'):
            pearson([0.5, 0.5, 0.5], [0.1, 0.2, 0.3])

    def test_length_mismatch(self):
        with self.assertRaises(ValueError):
            pearson([1, 2], [1, 2, 3])


class CfTests(SimpleTestCase):
    def test_identical_vectors(self):
        s = [0.6, 0.7, 0.9]
        self.assertAlmostEqual(cf_coefficient(AccuracyProfile(s, s)), 100.0, delta=1e-10)

    def test_reversed_ranking(self):
        s = np.array([0.2, 0.5, 0.8])
        self.assertAlmostEqual(cf_coefficient(AccuracyProfile(s, 1.0 - s)), -100.0, delta=1e-10)

    def test_three_clients(self):
        s, p = [0.6, 0.7, 0.8], [0.61, 0.72, 0.80]
        cf = cf_coefficient(AccuracyProfile(s, p))
        self.assertAlmostEqual(cf, 100 * hand_pearson(s, p), delta=1e-10)
        self.assertAlmostEqual(cf, 99.587, places=2)

    def test_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            profile = AccuracyProfile(rng.uniform(size=5), rng.uniform(size=5))
            self.assertLessEqual(abs(cf_coefficient(profile)), 100.0)

    def test_affine_invariance(self):
        rng = np.random.default_rng(1)
        s, p = rng.uniform(0.2, 0.6, 6), rng.uniform(0.2, 0.6, 6)
        base = cf_coefficient(AccuracyProfile(s, p))
        rescaled = cf_coefficient(AccuracyProfile(0.5 * s + 0.2, 1.5 * p + 0.05))
        self.assertAlmostEqual(base, rescaled, delta=1e-10)

    def test_rejects_out_of_range(self):
        with self.assertRaises(ValueError):
            AccuracyProfile([0.5, 1.2], [0.5, 0.5])


class SummarizeTests(SimpleTestCase):
    def test_single_client(self):
        summary = summarize(AccuracyProfile([0.4], [0.8]))
        self.assertEqual((summary.max_acc, summary.avg_acc), (0.8, 0.8))
        self.assertFalse(summary.cf_defined)

    def test_two_clients(self):
        summary = summarize(AccuracyProfile([0.3, 0.6], [0.5, 0.9]))
        self.assertAlmostEqual(summary.max_acc, 0.9)
        self.assertAlmostEqual(summary.avg_acc, 0.7)
        self.assertAlmostEqual(summary.cf, 100.0)

    def test_constant_federated_accuracy_is_undefined(self):
        self.assertIsNone(summarize(AccuracyProfile([0.3, 0.6, 0.7], [0.8, 0.8, 0.8])).cf)

    def test_joint_permutation_and_max_above_mean(self):
        rng = np.random.default_rng(2)
        s, p = rng.uniform(size=7), rng.uniform(size=7)
        order = rng.permutation(7)
        a = summarize(AccuracyProfile(s, p))
        b = summarize(AccuracyProfile(s[order], p[order]))
        self.assertAlmostEqual(a.cf, b.cf, delta=1e-10)
        self.assertEqual(a.max_acc, b.max_acc)
        self.assertAlmostEqual(a.avg_acc, b.avg_acc, delta=1e-15)
        self.assertGreaterEqual(a.max_acc, a.avg_acc)

    def test_history_must_match_client_count(self):
        history = RoundHistory()
        history.append(RoundRecord(1, 0.5, (ClientRecord(0, 0.9, 3, 4),)))
        with self.assertRaises(ValueError):
            summarize(AccuracyProfile([0.3, 0.6], [0.5, 0.9]), history)


class AggregateRunsTests(SimpleTestCase):
    def test_identical_runs_have_zero_std(self):
        summary = summarize(AccuracyProfile([0.3, 0.6], [0.5, 0.9]))
        stats = aggregate_runs([summary] * 3)
        self.assertAlmostEqual(stats['cf_std'], 0.0, delta=1e-12)
        self.assertAlmostEqual(stats['avg_acc_std'], 0.0, delta=1e-12)

    def test_undefined_runs_are_counted(self):
        good = summarize(AccuracyProfile([0.3, 0.6], [0.5, 0.9]))
        bad = summarize(AccuracyProfile([0.3, 0.6], [0.9, 0.9]))
        stats = aggregate_runs([good, bad])
        self.assertEqual(stats['cf_undefined_runs'], 1)
        self.assertAlmostEqual(stats['cf_mean'], 100.0)
        self.assertIsNone(aggregate_runs([bad])['cf_mean'])
