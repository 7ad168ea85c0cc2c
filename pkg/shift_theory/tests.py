import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from sklearn.datasets import make_spd_matrix

from data_gen.gaussian import GaussianParams

from .kl import (
    GeneralPerturbation, PerturbationGaussian, as_general_perturbation, fitting_term,
    kl_approx_theorem1, kl_approx_theorem2, kl_gaussian_exact,
)
from .validation import (
    ROW_HEADER, sample_covariance_perturbation, summarize_validation,
    validate_approximation, write_rows,
)


def standard(M):
    return GaussianParams.from_moments(np.zeros(M), np.eye(M))


def random_base(M, seed):
    rng = np.random.default_rng(seed)
    return GaussianParams.from_moments(rng.normal(size=M), make_spd_matrix(M, random_state=seed) + 0.5 * np.eye(M))


class FixedMatrixNormal:
    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)

    def standard_normal(self, size):
        return self.matrix.reshape(size)


class ExactKLTests(SimpleTestCase):
    def test_identical_gaussians(self):
        g = random_base(4, 1)
        self.assertAlmostEqual(kl_gaussian_exact(g, g), 0.0, delta=1e-12)

    def test_mean_shift_in_one_dimension(self):
        p = GaussianParams.from_moments([1.0], [[1.0]])
        self.assertAlmostEqual(kl_gaussian_exact(p, standard(1)), 0.5, places=12)

    def test_variance_change_in_one_dimension(self):
        p = GaussianParams.from_moments([0.0], [[2.0]])
        self.assertAlmostEqual(kl_gaussian_exact(p, standard(1)), 0.5 * (1 - np.log(2)), places=12)
        self.assertAlmostEqual(kl_gaussian_exact(p, standard(1)), 0.15343, places=5)

    def test_nonnegative_on_random_pairs(self):
        for seed in range(30):
            self.assertGreaterEqual(kl_gaussian_exact(random_base(3, seed), random_base(3, seed + 100)), 0.0)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            kl_gaussian_exact(standard(2), standard(3))


class PerturbationTests(SimpleTestCase):
    def test_rejects_asymmetric_delta_sigma(self):
        with self.assertRaises(ValueError):
            PerturbationGaussian(np.zeros(2), [[0.0, 0.1], [0.0, 0.0]], standard(2), 100)

    def test_rejects_loss_of_positive_definiteness(self):
        with self.assertRaises(ValueError):
            PerturbationGaussian(np.zeros(2), -2 * np.eye(2), standard(2), 100)

    def test_rejects_shape_mismatch(self):
        with self.assertRaises(ValueError):
            PerturbationGaussian(np.zeros(3), np.zeros((2, 2)), standard(2), 100)

    def test_general_rejects_asymmetric_fisher(self):
        with self.assertRaises(ValueError):
            GeneralPerturbation([0.0, 0.0], [[1.0, 1.0], [0.0, 1.0]], np.zeros((2, 2)), 4, 100)

    def test_general_rejects_zero_free_params(self):
        with self.assertRaises(ValueError):
            GeneralPerturbation([0.0], [[1.0]], [[0.0]], 0, 100)


class GaussianApproximationTests(SimpleTestCase):
    def test_zero_perturbation_is_the_fitting_term(self):
        pert = PerturbationGaussian(np.zeros(2), np.zeros((2, 2)), standard(2), 100)
        self.assertAlmostEqual(kl_approx_theorem2(pert), 0.025, places=14)

    def test_zero_perturbation_identity_across_sizes(self):
        for M, A in [(2, 100), (5, 10_000), (10, 1000)]:
            pert = PerturbationGaussian(np.zeros(M), np.zeros((M, M)), random_base(M, M), A)
            self.assertAlmostEqual(kl_approx_theorem2(pert), M * (M + 3) / (4 * A), places=14)

    def test_pure_mean_shift(self):
        delta_mu = np.array([0.2, 0.0, 0.0])
        pert = PerturbationGaussian(delta_mu, np.zeros((3, 3)), standard(3), 10_000)
        self.assertAlmostEqual(kl_approx_theorem2(pert), 0.02045, places=12)

    def test_scalar_covariance_perturbation(self):
        M, A, eps = 4, 500, 0.03
        pert = PerturbationGaussian(np.zeros(M), eps * np.eye(M), standard(M), A)
        expected = M * (eps ** 2 / 4 - eps ** 3 / 2) + M * (M + 3) / (4 * A)
        self.assertAlmostEqual(kl_approx_theorem2(pert), expected, places=12)

    def test_strictly_increasing_in_mean_radius(self):
        base = random_base(4, 7)
        direction = np.random.default_rng(3).normal(size=4)
        values = [
            kl_approx_theorem2(PerturbationGaussian(s * direction, np.zeros((4, 4)), base, 1000))
            for s in np.linspace(0.0, 2.0, 11)
        ]
        self.assertTrue(np.all(np.diff(values) > 0))

    def test_matches_exact_kl_plus_fitting_term_for_small_mean_shift(self):
        M, A = 5, 10_000
        base = random_base(M, 11)
        rng = np.random.default_rng(0)
        for C in (0.01, 0.1, 0.25):
            u = rng.normal(size=M)
            delta_mu = np.sqrt(C / (u @ u)) * (base.chol @ u)
            pert = PerturbationGaussian(delta_mu, np.zeros((M, M)), base, A)
            target = kl_gaussian_exact(pert.shifted, base) + fitting_term(M, A)
            self.assertLessEqual(abs(kl_approx_theorem2(pert) - target), 0.1 * target)

    def test_second_order_agreement_with_exact_kl(self):
        base = standard(3)
        rng = np.random.default_rng(1)
        G = rng.normal(size=(3, 3))
        delta_Sigma = 1e-3 * (G + G.T) / 2
        delta_mu = 1e-3 * rng.normal(size=3)
        pert = PerturbationGaussian(delta_mu, delta_Sigma, base, 10 ** 12)
        exact = kl_gaussian_exact(pert.shifted, base)
        self.assertLess(abs(kl_approx_theorem2(pert) - exact), 1e-2 * exact)


class GeneralApproximationTests(SimpleTestCase):
    def test_zero_delta(self):
        pert = GeneralPerturbation(np.zeros(3), np.eye(3), np.zeros((3, 3)), 6, 40)
        self.assertAlmostEqual(kl_approx_theorem1(pert), 6 / 80, places=14)

    def test_identity_fisher(self):
        pert = GeneralPerturbation([1.0, 1.0], np.eye(2), np.zeros((2, 2)), 4, 100)
        self.assertAlmostEqual(kl_approx_theorem1(pert), 1.02, places=14)

    def test_scalar(self):
        pert = GeneralPerturbation([0.1], [[3.0]], [[0.6]], 2, 50)
        self.assertAlmostEqual(kl_approx_theorem1(pert), 0.5 * 0.03 + 0.5 * 0.006 + 2 / 100, places=14)


class FisherConsistencyTests(SimpleTestCase):
    def test_identity_covariance_matches_gaussian_approximation(self):
        rng = np.random.default_rng(2)
        for M in (1, 2, 4):
            G = rng.normal(size=(M, M))
            pert = PerturbationGaussian(0.1 * rng.normal(size=M), 0.02 * (G + G.T), standard(M), 500)
            self.assertAlmostEqual(kl_approx_theorem1(as_general_perturbation(pert)),
                                   kl_approx_theorem2(pert), delta=1e-10)

    def test_mean_only_perturbation_matches_gaussian_approximation(self):
        for seed in range(5):
            base = random_base(3, seed)
            delta_mu = np.random.default_rng(seed).normal(size=3)
            pert = PerturbationGaussian(delta_mu, np.zeros((3, 3)), base, 300)
            self.assertAlmostEqual(kl_approx_theorem1(as_general_perturbation(pert)),
                                   kl_approx_theorem2(pert), delta=1e-10)

    def test_free_parameter_count(self):
        pert = PerturbationGaussian(np.zeros(4), np.zeros((4, 4)), standard(4), 10)
        general = as_general_perturbation(pert)
        self.assertEqual(general.free_params_R, 14)
        self.assertEqual(general.delta.shape, (4 + 16,))


class CovariancePerturbationTests(SimpleTestCase):
    def test_target_frobenius_norm(self):
        base = random_base(3, 4)
        delta = sample_covariance_perturbation(base, np.random.default_rng(0), 0.05)
        np.testing.assert_allclose(delta, delta.T)
        self.assertAlmostEqual(np.linalg.norm(delta, 'fro'), 0.05 * np.linalg.norm(base.covariance, 'fro'), places=12)

    def test_halves_until_positive_definite(self):
        base = GaussianParams.from_moments(np.zeros(2), np.diag([1.0, 0.01]))
        with self.assertLogs('shift_theory.validation', level='INFO'):
            delta = sample_covariance_perturbation(base, FixedMatrixNormal([[0.0, 0.0], [0.0, -1.0]]), 0.05)
        self.assertGreater(np.linalg.eigvalsh(base.covariance + delta).min(), 0.0)
        self.assertLess(np.linalg.norm(delta, 'fro'), 0.05 * np.linalg.norm(base.covariance, 'fro'))

    def test_gives_up_after_ten_halvings(self):
        base = GaussianParams.from_moments(np.zeros(2), np.diag([1.0, 1e-9]))
        with self.assertRaises(ValueError):
            sample_covariance_perturbation(base, FixedMatrixNormal([[0.0, 0.0], [0.0, -1.0]]), 0.05)


class ValidateApproximationTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(42)
        self.base = rng.normal(size=(5000, 2)) @ np.array([[1.0, 0.3], [0.0, 0.8]])

    def test_rejects_small_sample_counts(self):
        with self.assertRaises(ValueError):
            validate_approximation(self.base, [1.0], [19], np.random.default_rng(0))

    def test_rejects_mismatched_inputs(self):
        with self.assertRaises(ValueError):
            validate_approximation(self.base, [1.0, 2.0], [100], np.random.default_rng(0))

    def test_deterministic_for_a_seed(self):
        first = validate_approximation(self.base, [0.5, 2.0], [200, 400], np.random.default_rng(9))
        second = validate_approximation(self.base, [0.5, 2.0], [200, 400], np.random.default_rng(9))
        self.assertEqual(first, second)
        self.assertEqual([r.client for r in first], [0, 1])

    def test_shifted_clients_exceed_random_resampling(self):
        rows = validate_approximation(self.base, [1.0, 3.0, 5.0], [1000] * 3, np.random.default_rng(5))
        for row in rows:
            self.assertGreater(row.real_kl, row.random_kl)

    def test_random_resampling_matches_fitting_term(self):
        n = 200
        rows = validate_approximation(self.base, [0.0] * n, [1000] * n, np.random.default_rng(6),
                                      delta_sigma_scale=0.0)
        summary, = summarize_validation(rows, dim=2)
        self.assertEqual(summary.fitting_term, 2 * 5 / 4000)
        self.assertAlmostEqual(summary.random_kl, summary.fitting_term, delta=0.25 * summary.fitting_term)
        self.assertAlmostEqual(summary.real_kl, summary.random_kl, delta=0.25 * summary.random_kl)
        self.assertAlmostEqual(summary.approx_kl, summary.fitting_term, delta=1e-15)

    def test_approximation_tracks_real_kl_for_small_shifts(self):
        M = 5
        base = np.random.default_rng(8).normal(size=(20_000, M))
        rows = validate_approximation(base, [0.25] * 20, [10_000] * 20, np.random.default_rng(7),
                                      delta_sigma_scale=0.0)
        summary, = summarize_validation(rows, dim=M)
        self.assertLessEqual(abs(summary.approx_kl - summary.real_kl), 0.1 * summary.real_kl)

    def test_rows_written_as_csv(self):
        rows = validate_approximation(self.base, [1.0], [100], np.random.default_rng(0))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'theory.csv'
            write_rows(path, ROW_HEADER, rows)
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'client,C,A,real_kl,approx_kl,random_kl')
        self.assertEqual(lines[1].split(',')[:3], ['0', '1', '100'])
