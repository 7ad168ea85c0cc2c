import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, tag
from scipy.stats import norm

from classifiers.nets import Classifier, Kind, predict
from data_gen.dataset import Dataset
from data_gen.partition import build_partition, make_blobs_dataset, split_train_test
from fl_engine.config import FedConfig
from fl_engine.engine import ClientState, run_federation

from .density import Density1D, covering_grid, kde_evaluate, kde_pdf, kl_empirical_1d, silverman_bandwidth
from .divergence import (
    client_gaussian_divergence, right_wrong_divergence, write_densities, write_divergences,
)
from .projection import fit_principal_axis, pca_project_1d


def boundary_model(dims):
    """Linear classifier splitting on the sign of sum(x)"""
    return Classifier(Kind.LINEAR, {'W': np.tile([-1.0, 1.0], (dims, 1)), 'b': np.zeros(2)})


def noisy_blobs(seed=0, n=1000, dims=2):
    return make_blobs_dataset(2, dims, 2.0, n, np.random.default_rng(seed))


class PrincipalAxisTests(SimpleTestCase):
    def test_points_on_a_line(self):
        t = np.random.default_rng(0).normal(size=200)
        X = t[:, None] * np.array([1.0, 2.0]) + np.array([3.0, -1.0])
        axis = fit_principal_axis(X)
        np.testing.assert_allclose(axis.direction, np.array([1.0, 2.0]) / np.sqrt(5), atol=1e-9)
        projections = axis.project(X)
        np.testing.assert_allclose(projections, np.sqrt(5) * (t - t.mean()), atol=1e-9)
        residual = (X - X.mean(axis=0)) - projections[:, None] * axis.direction
        self.assertLess(np.var(residual), 1e-18)

    def test_isotropic_data_gives_an_eigenvector(self):
        X = np.vstack([np.eye(3), -np.eye(3)])
        axis = fit_principal_axis(X)
        cov = X.T @ X / len(X)
        self.assertAlmostEqual(np.linalg.norm(axis.direction), 1.0, places=12)
        self.assertLessEqual(np.linalg.norm(cov @ axis.direction - axis.eigenvalue * axis.direction), 1e-6)
        self.assertTrue(axis.converged)

    def test_eigen_residual_on_sampled_data(self):
        X = np.random.default_rng(1).normal(size=(2000, 3))
        axis = fit_principal_axis(X)
        centered = X - X.mean(axis=0)
        cov = centered.T @ centered / len(X)
        residual = np.linalg.norm(cov @ axis.direction - axis.eigenvalue * axis.direction)
        self.assertLessEqual(residual, 1e-6 * axis.eigenvalue)

    def test_dominant_axis_of_diagonal_covariance(self):
        X = np.random.default_rng(2).normal(size=(5000, 2)) * np.array([2.0, 1.0])
        direction = fit_principal_axis(X).direction
        angle = np.degrees(np.arccos(min(1.0, abs(direction[0]))))
        self.assertLess(angle, 5.0)
        self.assertGreater(direction[0], 0)

    def test_sign_makes_largest_component_positive(self):
        t = np.random.default_rng(3).normal(size=100)
        X = t[:, None] * np.array([0.5, -3.0])
        direction = fit_principal_axis(X).direction
        self.assertGreater(direction[1], 0)

    def test_projection_length(self):
        X = np.random.default_rng(4).normal(size=(50, 4))
        self.assertEqual(pca_project_1d(X).shape, (50,))

    def test_zero_variance(self):
        with self.assertRaises(ValueError):
            fit_principal_axis(np.ones((10, 3)))

    def test_single_sample(self):
        with self.assertRaises(ValueError):
            fit_principal_axis(np.ones((1, 3)))

    def test_warns_when_iteration_budget_runs_out(self):
        X = np.random.default_rng(5).normal(size=(500, 3))
        with self.assertLogs('analysis.projection', level='WARNING'):
            axis = fit_principal_axis(X, max_iter=1)
        self.assertFalse(axis.converged)


class DensityTests(SimpleTestCase):
    def test_rejects_unsorted_grid(self):
        with self.assertRaises(ValueError):
            Density1D([0.0, 2.0, 1.0], [0.1, 0.1, 0.1])

    def test_rejects_negative_pdf(self):
        with self.assertRaises(ValueError):
            Density1D([0.0, 1.0], [0.5, -0.1])

    def test_rejects_pdf_that_does_not_integrate_to_one(self):
        with self.assertRaisesMessage(ValueError, 'integrates to'):
            Density1D([0.0, 1.0, 2.0], [0.1, 0.1, 0.1])
        Density1D([0.0, 1.0, 2.0], [0.5, 0.5, 0.5])

    def test_partial_grid_cannot_hold_a_density(self):
        samples = np.random.default_rng(7).normal(size=500)
        with self.assertRaises(ValueError):
            kde_pdf(samples, np.linspace(0.0, 3.0, 200))

    def test_symmetric_samples_give_symmetric_pdf(self):
        density = kde_pdf([-1.0, 1.0], np.linspace(-5, 5, 101))
        np.testing.assert_allclose(density.pdf, density.pdf[::-1], atol=1e-12)

    def test_integrates_to_one_on_a_wide_grid(self):
        samples = np.random.default_rng(0).normal(size=500)
        h = silverman_bandwidth(samples)
        density = kde_pdf(samples, np.linspace(samples.min() - 6 * h, samples.max() + 6 * h, 2000))
        self.assertGreaterEqual(density.mass(), 0.99)
        self.assertLessEqual(density.mass(), 1.01)
        self.assertTrue(density.is_normalized())

    def test_bandwidth_is_silverman(self):
        samples = np.random.default_rng(1).normal(size=300)
        expected = 1.06 * np.std(samples, ddof=1) * 300 ** -0.2
        self.assertAlmostEqual(silverman_bandwidth(samples), expected, places=14)

    def test_recovers_standard_normal(self):
        grid = np.linspace(-2, 2, 81)
        pdfs = [kde_evaluate(np.random.default_rng(seed).normal(size=10_000), grid) for seed in range(5)]
        self.assertLessEqual(np.max(np.abs(np.mean(pdfs, axis=0) - norm.pdf(grid))), 0.03)

    def test_degenerate_samples(self):
        for samples in ([1.0], [2.0, 2.0, 2.0]):
            with self.assertRaises(ValueError):
                kde_pdf(samples, np.linspace(0, 1, 5))

    def test_covering_grid_spans_every_set(self):
        a = np.random.default_rng(2).normal(size=100)
        b = np.random.default_rng(3).normal(loc=5.0, size=30)
        grid = covering_grid([a, b], points=64)
        self.assertEqual(grid.size, 64)
        self.assertLess(grid[0], a.min())
        self.assertGreater(grid[-1], b.max())


class EmpiricalKLTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.a = rng.normal(size=10_000)
        self.b = rng.normal(loc=1.0, size=10_000)
        self.grid = covering_grid([self.a, self.b])

    def test_identical_densities(self):
        p = kde_pdf(self.a, self.grid)
        self.assertAlmostEqual(kl_empirical_1d(p, p), 0.0, delta=1e-9)

    def test_unit_mean_shift(self):
        p, q = kde_pdf(self.a, self.grid), kde_pdf(self.b, self.grid)
        self.assertAlmostEqual(kl_empirical_1d(p, q), 0.5, delta=0.15)
        self.assertNotAlmostEqual(kl_empirical_1d(p, q), kl_empirical_1d(q, p), places=6)

    def test_nonnegative_on_shared_grid(self):
        p, q = kde_pdf(self.a[:50], self.grid), kde_pdf(self.a[50:200], self.grid)
        self.assertGreaterEqual(kl_empirical_1d(p, q), -1e-9)

    def test_grid_mismatch(self):
        p = kde_pdf(self.a, self.grid)
        q = kde_pdf(self.a, self.grid + 0.1)
        with self.assertRaises(ValueError):
            kl_empirical_1d(p, q)


class RightWrongDivergenceTests(SimpleTestCase):
    def setUp(self):
        self.data = noisy_blobs()
        self.model = boundary_model(2)

    def test_identical_clients_are_close_to_the_pool(self):
        result = right_wrong_divergence([(self.data, self.model)] * 3)
        self.assertEqual(len(result.usable()), 3)
        for record in result.clients:
            self.assertLessEqual(record.kl_right, 0.05)
            self.assertLessEqual(record.kl_wrong, 0.05)
            self.assertTrue(record.right_density.is_normalized())

    def test_all_correct_client_is_skipped(self):
        correct = self.data.subset(np.flatnonzero(predict(self.model, self.data.features) == self.data.labels))
        clients = [(self.data, self.model), (self.data, self.model), (correct, self.model)]
        with self.assertLogs('analysis.divergence', level='INFO'):
            result = right_wrong_divergence(clients)
        self.assertEqual([c.skipped for c in result.clients], [False, False, True])
        self.assertIsNone(result.clients[2].kl_wrong)

    def test_needs_two_usable_clients(self):
        correct = self.data.subset(np.flatnonzero(predict(self.model, self.data.features) == self.data.labels))
        with self.assertRaises(ValueError):
            right_wrong_divergence([(self.data, self.model), (correct, self.model)])

    def test_hidden_layer_features(self):
        model = Classifier.mlp(2, 2, np.random.default_rng(0), hidden=8)
        halves = [self.data.subset(range(500)), self.data.subset(range(500, 1000))]
        try:
            result = right_wrong_divergence([(d, model) for d in halves])
        except ValueError:
            self.skipTest("random network classified one half perfectly")
        for record in result.usable():
            self.assertGreaterEqual(record.kl_right, -1e-9)

    def test_wrong_axis_follows_the_client_shift(self):
        # rights spread along x, wrongs hug the boundary x = 0; the second client sits 3 higher in y
        rng = np.random.default_rng(4)
        x_right = rng.choice([-1.0, 1.0], 400) * rng.uniform(2.0, 6.0, 400)
        x_wrong = rng.uniform(0.05, 0.5, 100)
        x = np.concatenate([x_right, x_wrong])
        y = rng.normal(0.0, 0.3, 500)
        labels = np.concatenate([(x_right > 0).astype(np.int64), np.zeros(100, dtype=np.int64)])
        model = Classifier(Kind.LINEAR, {'W': np.array([[-1.0, 1.0], [0.0, 0.0]]), 'b': np.zeros(2)})
        low = Dataset(np.column_stack([x, y]), labels, 2)
        high = Dataset(np.column_stack([x, y + 3.0]), labels, 2)
        result = right_wrong_divergence([(low, model), (high, model)])
        for record in result.clients:
            self.assertLessEqual(record.kl_right, 0.05)
            self.assertGreater(record.kl_wrong, 0.3)

    def test_csv_outputs(self):
        correct = self.data.subset(np.flatnonzero(predict(self.model, self.data.features) == self.data.labels))
        result = right_wrong_divergence([(self.data, self.model), (self.data, self.model), (correct, self.model)])
        with tempfile.TemporaryDirectory() as tmp:
            write_divergences(Path(tmp) / 'rw.csv', result)
            write_densities(Path(tmp) / 'densities.csv', result)
            lines = (Path(tmp) / 'rw.csv').read_text().splitlines()
            densities = (Path(tmp) / 'densities.csv').read_text().splitlines()
        self.assertEqual(lines[0], 'client,kl_right,kl_wrong,skipped')
        self.assertEqual(lines[3], '2,,,1')
        self.assertEqual(densities[0], 'client,set,x,pdf')
        self.assertEqual(len(densities), 1 + 6 * 512)


class GaussianDivergenceTests(SimpleTestCase):
    def test_identical_clients(self):
        data = noisy_blobs()
        for value in client_gaussian_divergence([data, data]):
            self.assertAlmostEqual(value, 0.0, delta=1e-9)

    def test_shifted_client_stands_out(self):
        data = noisy_blobs(n=600)
        shifted = Dataset(data.features + 3.0, data.labels, 2)
        values = client_gaussian_divergence([data, data, shifted])
        self.assertGreater(values[2], values[0])


@tag('benchmark')
class ShiftedFederationDivergenceTests(SimpleTestCase):
    def test_wrong_samples_drift_more_than_right_ones(self):
        gaps = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            base = make_blobs_dataset(2, 10, 2.0, 4000, rng)
            partition = build_partition('ics', base, 8, rng, radius_C=5.0)
            clients = []
            for k, data in enumerate(partition.clients):
                train_data, test_data = split_train_test(data, 0.2, rng)
                clients.append(ClientState(k, Classifier.linear(10, 2), train_data, test_data))
            pooled = Dataset.concat([c.train_data for c in clients])
            result = run_federation(FedConfig(K=8, T=10, algo='fedavg', seed=seed), clients, pooled)
            try:
                divergence = right_wrong_divergence([(c.train_data, result.global_model) for c in clients])
            except ValueError:
                continue
            kl_right, kl_wrong = divergence.mean_kl()
            gaps.append(kl_wrong - kl_right)
        self.assertGreater(np.mean(gaps), 0.0)
