import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase
from scipy.special import expit

from data_gen.dataset import Dataset
from data_gen.partition import make_blobs_dataset

from .losses import ce_loss, grad_ce, grad_kd, kd_loss
from .nets import Classifier, Kind, accuracy, forward, hidden, predict
from .training import gradient_norm, inexactness, train


def bias_model(probs):
    """Linear model on 1-D input whose output ignores x and equals `probs`"""
    probs = np.asarray(probs, dtype=float)
    return Classifier(Kind.LINEAR, {'W': np.zeros((1, probs.size)), 'b': np.log(probs)})


def random_instance(kind, rng, d=4, num_classes=3, n=8):
    data = Dataset(rng.normal(size=(n, d)), rng.integers(0, num_classes, n), num_classes)
    while True:
        if kind == Kind.LINEAR:
            model = Classifier(Kind.LINEAR, {
                'W': 0.5 * rng.normal(size=(d, num_classes)), 'b': 0.5 * rng.normal(size=num_classes),
            })
            return model, data
        model = Classifier.mlp(d, num_classes, rng, hidden=6)
        model = model.with_params({**model.params, 'b1': 0.3 * rng.normal(size=6)})
        pre = data.features @ model.params['W1'] + model.params['b1']
        # keep finite differences away from ReLU kinks
        if np.min(np.abs(pre)) > 1e-3:
            return model, data


def numeric_gradient(loss, model, h=1e-5):
    theta = model.to_vector()
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h
        grad[i] = (loss(model.from_vector(theta + step)) - loss(model.from_vector(theta - step))) / (2 * h)
    return grad


def flatten(model, grad):
    return np.concatenate([grad[name].ravel() for name in model.names])


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


class ForwardTests(SimpleTestCase):
    def test_zero_model_is_uniform(self):
        probs = forward(Classifier.linear(4, 3), np.random.default_rng(0).normal(size=(5, 4)))
        np.testing.assert_allclose(probs, np.full((5, 3), 1 / 3))

    def test_two_class_softmax_is_sigmoid(self):
        for z in (-3.0, 0.2, 5.0):
            model = Classifier(Kind.LINEAR, {'W': np.array([[z, 0.0]]), 'b': np.zeros(2)})
            self.assertAlmostEqual(forward(model, np.array([[1.0]]))[0, 0], expit(z), places=12)

    def test_known_logits(self):
        model = Classifier(Kind.LINEAR, {'W': np.array([[2.0, 0.0]]), 'b': np.zeros(2)})
        np.testing.assert_allclose(forward(model, np.array([[1.0]]))[0], [0.8808, 0.1192], atol=1e-4)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        model = Classifier.mlp(3, 4, rng)
        probs = forward(model, 10 * rng.normal(size=(50, 3)))
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            forward(Classifier.linear(3, 2), np.zeros((2, 4)))

    def test_hidden_features(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(6, 3))
        np.testing.assert_array_equal(hidden(Classifier.linear(3, 2), X), X)
        mlp = Classifier.mlp(3, 2, rng, hidden=5)
        self.assertEqual(hidden(mlp, X).shape, (6, 5))
        self.assertTrue(np.all(hidden(mlp, X) >= 0))


class LossTests(SimpleTestCase):
    def setUp(self):
        self.x = Dataset(np.zeros((2, 1)), np.array([0, 1]), 2)

    def test_uniform_ce_is_log_two(self):
        self.assertAlmostEqual(ce_loss(Classifier.linear(1, 2), self.x), np.log(2))

    def test_confident_correct_model(self):
        model = bias_model([1 - 1e-12, 1e-12])
        data = Dataset(np.zeros((3, 1)), np.zeros(3, dtype=int), 2)
        self.assertAlmostEqual(ce_loss(model, data), 0.0, places=9)

    def test_mixed_probabilities(self):
        data = Dataset(np.zeros((2, 1)), np.array([0, 1]), 3)
        self.assertAlmostEqual(ce_loss(bias_model([0.5, 0.25, 0.25]), data), (np.log(2) + np.log(4)) / 2)

    def test_empty_data(self):
        with self.assertRaises(ValueError):
            ce_loss(Classifier.linear(1, 2), Dataset.empty(1, 2))

    def test_uniform_teacher_and_student(self):
        uniform = Classifier.linear(1, 2)
        self.assertAlmostEqual(kd_loss(uniform, uniform, self.x), np.log(2))

    def test_soft_teacher_against_uniform_student(self):
        self.assertAlmostEqual(kd_loss(Classifier.linear(1, 2), bias_model([0.75, 0.25]), self.x), np.log(2))

    def test_one_hot_teacher_matches_ce(self):
        data = Dataset(np.zeros((4, 1)), np.zeros(4, dtype=int), 2)
        student = bias_model([0.3, 0.7])
        teacher = bias_model([1 - 1e-15, 1e-15])
        self.assertAlmostEqual(kd_loss(student, teacher, data), ce_loss(student, data), places=10)

    def test_self_distillation_is_entropy(self):
        rng = np.random.default_rng(3)
        model, data = random_instance(Kind.MLP1, rng)
        probs = forward(model, data.features)
        entropy = -np.mean(np.sum(probs * np.log(probs), axis=1))
        self.assertAlmostEqual(kd_loss(model, model, data), entropy, delta=1e-10)

    def test_teacher_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            kd_loss(Classifier.linear(1, 2), Classifier.linear(1, 3), self.x)


class GradientTests(SimpleTestCase):
    def test_ce_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        for kind in Kind:
            for _ in range(50):
                model, data = random_instance(kind, rng)
                analytic = flatten(model, grad_ce(model, data))
                numeric = numeric_gradient(lambda m: ce_loss(m, data), model)
                self.assertLessEqual(relative_error(analytic, numeric), 1e-5)

    def test_kd_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(20)
        for kind in Kind:
            for _ in range(50):
                model, data = random_instance(kind, rng)
                teacher, _ = random_instance(kind, rng)
                analytic = flatten(model, grad_kd(model, teacher, data))
                numeric = numeric_gradient(lambda m: kd_loss(m, teacher, data), model)
                self.assertLessEqual(relative_error(analytic, numeric), 1e-5)

    def test_temperature_gradient(self):
        rng = np.random.default_rng(30)
        model, data = random_instance(Kind.LINEAR, rng)
        model = Classifier(model.kind, model.params, tau=2.5)
        analytic = flatten(model, grad_ce(model, data))
        self.assertLessEqual(relative_error(analytic, numeric_gradient(lambda m: ce_loss(m, data), model)), 1e-5)

    def test_student_equal_to_teacher_is_stationary(self):
        rng = np.random.default_rng(4)
        model, data = random_instance(Kind.MLP1, rng)
        for value in grad_kd(model, model, data).values():
            np.testing.assert_allclose(value, 0.0, atol=1e-10)

    def test_binary_kd_gradient_is_sigmoid_difference(self):
        x = np.array([0.7, -1.2])
        data = Dataset(x[None, :], np.array([0]), 2)
        student = Classifier(Kind.LINEAR, {'W': np.array([[0.4, -0.1], [0.3, 0.2]]), 'b': np.array([0.1, 0.0])})
        teacher = Classifier(Kind.LINEAR, {'W': np.array([[-0.5, 0.2], [0.1, 0.6]]), 'b': np.zeros(2)})

        def margin(model):
            z = x @ model.params['W'] + model.params['b']
            return z[0] - z[1]

        expected = (expit(margin(student)) - expit(margin(teacher))) * x
        np.testing.assert_allclose(grad_kd(student, teacher, data)['W'][:, 0], expected, atol=1e-12)


class TrainTests(SimpleTestCase):
    def setUp(self):
        self.data = make_blobs_dataset(2, 2, 6.0, 400, np.random.default_rng(0))

    def test_zero_learning_rate_keeps_parameters(self):
        model = Classifier.mlp(2, 2, np.random.default_rng(1))
        result = train(model, self.data, eta=0.0, epochs=2, batch=16, rng=np.random.default_rng(2))
        np.testing.assert_array_equal(result.model.to_vector(), model.to_vector())

    def test_zero_kd_coefficient_matches_plain_training(self):
        model = Classifier.linear(2, 2)
        teacher = Classifier.mlp(2, 2, np.random.default_rng(5))
        plain = train(model, self.data, eta=0.1, epochs=3, batch=32, rng=np.random.default_rng(7))
        with_teacher = train(model, self.data, teacher=teacher, kd_coeff=0.0, eta=0.1, epochs=3,
                             batch=32, rng=np.random.default_rng(7))
        np.testing.assert_array_equal(plain.model.to_vector(), with_teacher.model.to_vector())

    def test_separable_blobs_are_learned(self):
        result = train(Classifier.linear(2, 2), self.data, eta=0.1, epochs=50, batch=32,
                       rng=np.random.default_rng(3))
        self.assertGreaterEqual(accuracy(result.model, self.data), 0.99)

    def test_last_partial_batch_counts(self):
        result = train(Classifier.linear(2, 2), self.data.subset(range(10)), epochs=2, batch=4,
                       rng=np.random.default_rng(0))
        self.assertEqual(result.steps, 6)

    def test_input_model_untouched(self):
        model = Classifier.linear(2, 2)
        train(model, self.data, eta=0.5, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(model.to_vector(), np.zeros(6))

    def test_empty_data_is_flagged_no_op(self):
        model = Classifier.linear(2, 2)
        result = train(model, Dataset.empty(2, 2), rng=np.random.default_rng(0))
        self.assertTrue(result.skipped)
        self.assertIs(result.model, model)

    def test_deterministic_under_seed(self):
        model = Classifier.mlp(2, 2, np.random.default_rng(9))
        a = train(model, self.data, eta=0.05, epochs=2, batch=8, rng=np.random.default_rng(4))
        b = train(model, self.data, eta=0.05, epochs=2, batch=8, rng=np.random.default_rng(4))
        np.testing.assert_array_equal(a.model.to_vector(), b.model.to_vector())

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            train(Classifier.linear(2, 2), self.data, eta=-1.0)
        with self.assertRaises(ValueError):
            train(Classifier.linear(2, 2), self.data, batch=0)

    def test_gradient_norm_matches_ce_gradient(self):
        model = Classifier.mlp(2, 2, np.random.default_rng(3))
        expected = np.linalg.norm(flatten(model, grad_ce(model, self.data)))
        self.assertAlmostEqual(gradient_norm(model, self.data), expected, places=12)

    def test_untouched_model_is_one_inexact(self):
        model = Classifier.mlp(2, 2, np.random.default_rng(4))
        self.assertEqual(inexactness(model, model, self.data), 1.0)

    def test_inexactness_undefined_without_data(self):
        model = Classifier.linear(2, 2)
        self.assertIsNone(inexactness(model, model, Dataset.empty(2, 2)))

    def test_full_batch_step_shrinks_the_gradient(self):
        model = Classifier.linear(2, 2)
        teacher = Classifier.mlp(2, 2, np.random.default_rng(5))
        trained = train(model, self.data, teacher=teacher, kd_coeff=1.0, eta=0.1, epochs=1,
                        batch=len(self.data), rng=np.random.default_rng(6)).model
        self.assertLessEqual(inexactness(model, trained, self.data, teacher, 1.0), 1.0)


class PredictTests(SimpleTestCase):
    def test_perfect_agreement(self):
        data = Dataset(np.array([[1.0], [-1.0]]), np.array([0, 1]), 2)
        model = Classifier(Kind.LINEAR, {'W': np.array([[5.0, -5.0]]), 'b': np.zeros(2)})
        self.assertEqual(accuracy(model, data), 1.0)

    def test_ties_go_to_class_zero(self):
        np.testing.assert_array_equal(predict(Classifier.linear(2, 4), np.ones((3, 2))), [0, 0, 0])

    def test_constant_predictor_on_balanced_data(self):
        data = Dataset(np.zeros((10, 1)), np.repeat([0, 1], 5), 2)
        self.assertEqual(accuracy(bias_model([0.9, 0.1]), data), 0.5)

    def test_empty_accuracy(self):
        with self.assertRaises(ValueError):
            accuracy(Classifier.linear(1, 2), Dataset.empty(1, 2))


class SerializationTests(SimpleTestCase):
    def test_json_document_layout(self):
        doc = Classifier.mlp(3, 2, np.random.default_rng(0), hidden=4, tau=2.0).to_json()
        self.assertEqual(doc['kind'], 'mlp1')
        self.assertEqual(doc['dims'], {'d': 3, 'hidden': 4, 'classes': 2})
        self.assertEqual(doc['params']['W1']['shape'], [3, 4])
        self.assertEqual(len(doc['params']['W1']['data']), 12)

    def test_save_and_load(self):
        model = Classifier.mlp(3, 2, np.random.default_rng(0), hidden=4, tau=2.0)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'model.json'
            model.save(path)
            loaded = Classifier.load(path)
        self.assertEqual(loaded.tau, 2.0)
        np.testing.assert_array_equal(loaded.to_vector(), model.to_vector())
