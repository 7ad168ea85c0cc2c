import tempfile
from collections import Counter
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from .dataset import Dataset
from .gaussian import GaussianParams, fit_gaussian, importance_weights, sample_shift_vector
from .partition import (
    Scheme, ShiftSpec, build_partition, dirichlet_counts, generate_covariate_shift,
    make_blobs_dataset, partition_cla, partition_dirichlet, partition_pow,
    powerlaw_sizes, split_train_test,
)


class FixedNormal:
    """Generator stand-in whose standard normal draws are fixed"""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float64)

    def standard_normal(self, size):
        return self.values[:size]


def balanced_two_class(n):
    rng = np.random.default_rng(0)
    labels = np.repeat([0, 1], n // 2)
    return Dataset(rng.normal(size=(n, 3)), labels, 2)


class DatasetTests(SimpleTestCase):
    def test_rejects_mismatched_rows(self):
        with self.assertRaises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(2, dtype=int), 2)

    def test_rejects_non_finite_features(self):
        with self.assertRaises(ValueError):
            Dataset(np.array([[np.nan, 1.0]]), np.array([0]), 1)

    def test_rejects_out_of_range_labels(self):
        with self.assertRaises(ValueError):
            Dataset(np.zeros((2, 1)), np.array([0, 2]), 2)

    def test_from_arrays_rejects_fractional_labels(self):
        with self.assertRaisesMessage(ValueError, 'integer class indices'):
            Dataset.from_arrays(np.zeros((3, 1)), [0.0, 1.5, 1.0])

    def test_from_arrays_accepts_integral_floats(self):
        data = Dataset.from_arrays(np.zeros((3, 1)), [0.0, 2.0, 1.0])
        self.assertEqual(data.num_classes, 3)
        np.testing.assert_array_equal(data.labels, [0, 2, 1])

    def test_csv_round_trip_keeps_values(self):
        data = Dataset(np.array([[0.1, -1 / 3], [1e-300, 2.5]]), np.array([1, 0]), 2)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'client.csv'
            data.to_csv(path)
            self.assertEqual(path.read_text().splitlines()[0], 'f0,f1,label')
            loaded = Dataset.from_csv(path, num_classes=2)
        np.testing.assert_array_equal(loaded.features, data.features)
        np.testing.assert_array_equal(loaded.labels, data.labels)

    def test_empty_csv_keeps_dimension(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'empty.csv'
            Dataset.empty(3, 2).to_csv(path)
            loaded = Dataset.from_csv(path, num_classes=2)
        self.assertEqual((len(loaded), loaded.dim), (0, 3))


class FitGaussianTests(SimpleTestCase):
    def test_constant_rows_give_ridge_only(self):
        g = fit_gaussian(np.tile([3.0, -1.0], (5, 1)))
        np.testing.assert_allclose(g.mean, [3.0, -1.0])
        np.testing.assert_allclose(g.covariance, 1e-6 * np.eye(2))

    def test_population_covariance_of_cross(self):
        g = fit_gaussian(np.array([[1, 0], [-1, 0], [0, 1], [0, -1]], dtype=float))
        eps = 1e-6 * 1.0 / 2
        np.testing.assert_allclose(g.mean, [0.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(g.covariance, np.diag([0.5, 0.5]) + eps * np.eye(2), atol=1e-15)

    def test_one_dimensional_variance(self):
        g = fit_gaussian(np.array([[0.0], [2.0]]))
        self.assertAlmostEqual(g.mean[0], 1.0)
        self.assertAlmostEqual(g.covariance[0, 0], 1.0 + 1e-6, places=12)

    def test_empty_input(self):
        with self.assertRaisesMessage(ValueError, 'empty input'):
            fit_gaussian(Dataset.empty(2, 2))

    def test_rejects_indefinite_covariance(self):
        with self.assertRaises(ValueError):
            GaussianParams.from_moments([0, 0], [[1, 2], [2, 1]])


class ShiftVectorTests(SimpleTestCase):
    def test_identity_metric_radius(self):
        g = GaussianParams.from_moments(np.zeros(2), np.eye(2))
        delta = sample_shift_vector(g, 4.0, np.random.default_rng(3))
        self.assertAlmostEqual(np.linalg.norm(delta), 2.0, places=12)

    def test_zero_radius(self):
        g = GaussianParams.from_moments(np.zeros(3), np.eye(3))
        np.testing.assert_array_equal(sample_shift_vector(g, 0.0, np.random.default_rng(0)), np.zeros(3))

    def test_forced_direction(self):
        g = GaussianParams.from_moments(np.zeros(2), np.diag([4.0, 1.0]))
        np.testing.assert_allclose(sample_shift_vector(g, 1.0, FixedNormal([1.0, 0.0])), [2.0, 0.0])

    def test_negative_radius(self):
        g = GaussianParams.from_moments(np.zeros(2), np.eye(2))
        with self.assertRaises(ValueError):
            sample_shift_vector(g, -1.0, np.random.default_rng(0))

    def test_mahalanobis_constraint_on_random_covariances(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            d = int(rng.integers(1, 8))
            a = rng.normal(size=(d, d))
            g = GaussianParams.from_moments(rng.normal(size=d), a @ a.T + 0.1 * np.eye(d))
            radius = float(rng.uniform(0.01, 20.0))
            delta = sample_shift_vector(g, radius, rng)
            value = float(g.mahalanobis_sq(delta[None, :], center=np.zeros(d))[0])
            self.assertLessEqual(abs(value - radius), 1e-9 * radius)


class ImportanceWeightTests(SimpleTestCase):
    def setUp(self):
        self.g = GaussianParams.from_moments(np.zeros(2), np.eye(2))

    def test_single_row(self):
        np.testing.assert_allclose(importance_weights(np.array([[5.0, 5.0]]), np.zeros(2), self.g), [1.0])

    def test_equidistant_rows(self):
        w = importance_weights(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2), self.g)
        np.testing.assert_allclose(w, [0.5, 0.5])

    def test_log_two_spacing(self):
        X = np.array([[0.0, 0.0], [np.sqrt(2 * np.log(2)), 0.0]])
        np.testing.assert_allclose(importance_weights(X, np.zeros(2), self.g), [2 / 3, 1 / 3])

    def test_far_rows_do_not_underflow(self):
        X = np.array([[100.0, 0.0], [101.0, 0.0]])
        w = importance_weights(X, np.zeros(2), self.g)
        self.assertTrue(np.all(np.isfinite(w)))
        self.assertAlmostEqual(w.sum(), 1.0, delta=1e-12)
        self.assertGreater(w[0], w[1])


class PowerlawSizesTests(SimpleTestCase):
    def test_single_client(self):
        np.testing.assert_array_equal(powerlaw_sizes(37, 1), [37])

    def test_exact_division(self):
        np.testing.assert_array_equal(powerlaw_sizes(150, 2), [100, 50])

    def test_remainder_by_largest_fraction(self):
        np.testing.assert_array_equal(powerlaw_sizes(300, 3), [164, 82, 54])

    def test_sizes_sum_exactly(self):
        for n_total, K, exponent in [(1000, 10, 1.0), (997, 7, 1.5), (64, 8, 0.5)]:
            self.assertEqual(int(powerlaw_sizes(n_total, K, exponent).sum()), n_total)

    def test_too_small(self):
        with self.assertRaisesMessage(ValueError, 'n_total too small for K'):
            powerlaw_sizes(11, 10, exponent=3.0)
        with self.assertRaisesMessage(ValueError, 'n_total too small for K'):
            powerlaw_sizes(3, 4)


class DirichletTests(SimpleTestCase):
    def test_single_client_gets_everything(self):
        data = balanced_two_class(20)
        (client,) = partition_dirichlet(data, 1, 0.5, np.random.default_rng(0))
        self.assertEqual(Counter(client.labels.tolist()), Counter(data.labels.tolist()))

    def test_floor_rule_with_forced_probabilities(self):
        np.testing.assert_array_equal(dirichlet_counts(8, [0.25, 0.75]), [2, 6])

    def test_leftovers_go_to_largest_share(self):
        np.testing.assert_array_equal(dirichlet_counts(10, [0.33, 0.34, 0.33]), [3, 4, 3])

    def test_labels_conserved(self):
        data = make_blobs_dataset(4, 3, 2.0, 400, np.random.default_rng(1))
        clients = partition_dirichlet(data, 5, 0.3, np.random.default_rng(2))
        merged = Counter(np.concatenate([c.labels for c in clients]).tolist())
        self.assertEqual(merged, Counter(data.labels.tolist()))

    def test_large_alpha_is_near_uniform(self):
        data = balanced_two_class(10000)
        for seed in range(3):
            for client in partition_dirichlet(data, 4, 1000.0, np.random.default_rng(seed)):
                proportions = client.class_counts() / len(client)
                np.testing.assert_allclose(proportions, [0.5, 0.5], rtol=0.1)

    def test_invalid_alpha(self):
        with self.assertRaises(ValueError):
            partition_dirichlet(balanced_two_class(4), 2, 0.0, np.random.default_rng(0))


class ClaTests(SimpleTestCase):
    def test_single_client_single_class(self):
        with self.assertLogs('data_gen.partition', level='INFO'):
            (client,) = partition_cla(balanced_two_class(10), 1, np.random.default_rng(0))
        self.assertEqual(set(client.labels.tolist()), {0})
        self.assertEqual(len(client), 5)

    def test_even_split(self):
        first, second = partition_cla(balanced_two_class(100), 2, np.random.default_rng(0))
        self.assertEqual(len(first), 50)
        self.assertEqual(set(first.labels.tolist()), {0})
        np.testing.assert_array_equal(second.class_counts(), [25, 25])

    def test_tenth_client_sees_ten_classes(self):
        data = make_blobs_dataset(10, 4, 1.0, 2000, np.random.default_rng(0))
        clients = partition_cla(data, 10, np.random.default_rng(1))
        for k, client in enumerate(clients, start=1):
            self.assertEqual(set(client.labels.tolist()), set(range(k)))

    def test_short_class_caps_the_client_evenly(self):
        data = Dataset(np.arange(12.0)[:, None], np.array([0, 0, 0] + [1] * 9), 2)
        first, second = partition_cla(data, 2, np.random.default_rng(0))
        np.testing.assert_array_equal(first.class_counts(), [3, 0])
        np.testing.assert_array_equal(second.class_counts(), [3, 3])

    def test_empty_required_class(self):
        data = Dataset(np.zeros((6, 1)), np.ones(6, dtype=int), 2)
        with self.assertRaisesMessage(ValueError, 'insufficient samples in class 0'):
            partition_cla(data, 2, np.random.default_rng(0))


class CovariateShiftTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(5)
        self.data = Dataset(rng.normal(size=(20000, 2)), rng.integers(0, 2, 20000), 2)

    def test_sizes_and_rows_come_from_input(self):
        spec = ShiftSpec(2.0, (30, 10, 5))
        clients, shifts = generate_covariate_shift(self.data, spec, 3, np.random.default_rng(0))
        self.assertEqual([len(c) for c in clients], [30, 10, 5])
        self.assertEqual(shifts.shape, (3, 2))
        rows = {tuple(r) + (int(y),) for r, y in zip(self.data.features, self.data.labels)}
        for client in clients:
            for row, label in zip(client.features, client.labels):
                self.assertIn(tuple(row) + (int(label),), rows)

    def test_shift_radius_holds(self):
        spec = ShiftSpec(3.0, (5, 5, 5, 5))
        _, shifts = generate_covariate_shift(self.data, spec, 4, np.random.default_rng(1))
        g = fit_gaussian(self.data)
        radii = g.mahalanobis_sq(shifts, center=np.zeros(2))
        np.testing.assert_allclose(radii, 3.0, rtol=1e-9)

    def test_zero_radius_means_no_shift(self):
        _, shifts = generate_covariate_shift(self.data, ShiftSpec(0.0, (10, 10)), 2, np.random.default_rng(2))
        np.testing.assert_array_equal(shifts, np.zeros((2, 2)))

    def test_client_mean_moves_part_way(self):
        spec = ShiftSpec(9.0, (2000,))
        (client,), shifts = generate_covariate_shift(self.data, spec, 1, np.random.default_rng(3))
        mu = self.data.features.mean(axis=0)
        delta = shifts[0]
        offset = client.features.mean(axis=0) - mu
        t = float(offset @ delta / (delta @ delta))
        self.assertGreater(t, 0.0)
        self.assertLess(t, 1.0)
        self.assertLessEqual(np.linalg.norm(offset - t * delta), 0.5)

    def test_deterministic_under_seed(self):
        spec = ShiftSpec(5.0, (40, 20))
        a, sa = generate_covariate_shift(self.data, spec, 2, np.random.default_rng(9))
        b, sb = generate_covariate_shift(self.data, spec, 2, np.random.default_rng(9))
        np.testing.assert_array_equal(sa, sb)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)
            np.testing.assert_array_equal(x.labels, y.labels)

    def test_rejects_empty_client(self):
        with self.assertRaises(ValueError):
            generate_covariate_shift(self.data, ShiftSpec(1.0, (3, 0)), 2, np.random.default_rng(0))


class BuildPartitionTests(SimpleTestCase):
    def setUp(self):
        self.data = make_blobs_dataset(2, 4, 2.0, 1000, np.random.default_rng(0))

    def test_bcs_sizes_are_equal(self):
        partition = build_partition(Scheme.BCS, self.data, 4, np.random.default_rng(1), radius_C=2.0)
        self.assertEqual([len(c) for c in partition.clients], [125] * 4)

    def test_ics_uses_powerlaw_sizes(self):
        partition = build_partition('ics', self.data, 5, np.random.default_rng(1), radius_C=5.0)
        expected = powerlaw_sizes(500, 5, 1.0).tolist()
        self.assertEqual([len(c) for c in partition.clients], expected)
        self.assertEqual(partition.shifts.shape, (5, 4))

    def test_pow_conserves_samples(self):
        clients = partition_pow(self.data, 4, np.random.default_rng(2))
        self.assertEqual(sum(len(c) for c in clients), len(self.data))
        self.assertEqual([len(c) for c in clients], powerlaw_sizes(1000, 4).tolist())

    def test_unknown_scheme(self):
        with self.assertRaises(ValueError):
            build_partition('iid', self.data, 2, np.random.default_rng(0))

    def test_train_test_split_is_nonempty(self):
        train, test = split_train_test(self.data.subset(range(5)), 0.2, np.random.default_rng(0))
        self.assertEqual((len(train), len(test)), (4, 1))
