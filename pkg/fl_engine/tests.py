import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from classifiers.losses import ce_loss
from classifiers.nets import Classifier, Kind, accuracy
from classifiers.training import inexactness, train
from data_gen.dataset import Dataset
from data_gen.partition import build_partition, make_blobs_dataset, split_train_test

from .config import INIT_CLIENT, STEP_GLOBAL, STEP_LOCAL, Algo, FedConfig, Weighting, keyed_rng
from .engine import ClientState, client_update, run_federation, select_high_confidence, server_aggregate


def constant_model(label, num_classes=2, d=1, strength=5.0):
    b = np.zeros(num_classes)
    b[label] = strength
    return Classifier(Kind.LINEAR, {'W': np.zeros((d, num_classes)), 'b': b})


def mirrored_client(client_id, per_class):
    """1-D client with rows at -5 (class 0) and +5 (class 1); every step keeps it perfectly separable"""
    features = np.concatenate([np.full(per_class, -5.0), np.full(per_class, 5.0)])[:, None]
    data = Dataset(features, np.repeat([0, 1], per_class), 2)
    return ClientState(client_id, Classifier.linear(1, 2), data, data)


def blob_clients(K=4, seed=0, separation=2.0, dims=3, n=800, radius_C=2.0):
    rng = np.random.default_rng(seed)
    base = make_blobs_dataset(2, dims, separation, n, rng)
    partition = build_partition('ics', base, K, rng, radius_C=radius_C)
    clients = []
    for k, data in enumerate(partition.clients):
        cut = max(1, len(data) // 5)
        clients.append(ClientState(k, Classifier.linear(dims, 2), data.subset(range(cut, len(data))),
                                   data.subset(range(cut))))
    pooled = Dataset.concat([c.train_data for c in clients])
    return clients, pooled


def desk_ics_clients(seed):
    """Two 10-d blobs, separation 2, ICS over 8 clients at C = 5, 20% local test"""
    rng = np.random.default_rng(seed)
    base = make_blobs_dataset(2, 10, 2.0, 4000, rng)
    partition = build_partition('ics', base, 8, rng, radius_C=5.0)
    clients = []
    for k, data in enumerate(partition.clients):
        train_data, test_data = split_train_test(data, 0.2, rng)
        clients.append(ClientState(k, Classifier.linear(10, 2), train_data, test_data))
    return clients, Dataset.concat([c.train_data for c in clients])


class SelectionTests(SimpleTestCase):
    def test_perfect_model_keeps_everything(self):
        data = Dataset(np.array([[1.0], [-1.0], [2.0]]), np.array([1, 0, 1]), 2)
        model = Classifier(Kind.LINEAR, {'W': np.array([[-3.0, 3.0]]), 'b': np.zeros(2)})
        np.testing.assert_array_equal(select_high_confidence(model, data).labels, data.labels)

    def test_constant_model_keeps_its_class(self):
        data = Dataset(np.arange(10.0)[:, None], np.tile([0, 1], 5), 2)
        selected = select_high_confidence(constant_model(0), data)
        self.assertEqual(len(selected), 5)
        np.testing.assert_array_equal(selected.features[:, 0], [0, 2, 4, 6, 8])

    def test_empty_data(self):
        self.assertEqual(len(select_high_confidence(constant_model(0), Dataset.empty(1, 2))), 0)


class ClientUpdateTests(SimpleTestCase):
    def setUp(self):
        self.clients, _ = blob_clients(K=2)
        self.w_g = Classifier.mlp(3, 2, np.random.default_rng(1), hidden=4)
        self.client = self.clients[0]

    def test_zero_coefficients_reduce_to_plain_training(self):
        cfg = FedConfig(K=2, alpha=0.0, beta=0.0, seed=3)
        update = client_update(self.client, self.w_g, cfg, 1)
        data = self.client.train_data
        w_k = train(self.client.local_model, data, eta=cfg.eta, batch=cfg.batch,
                    rng=keyed_rng(3, self.client.id, 1, STEP_LOCAL)).model
        selected = select_high_confidence(w_k, data)
        w_gk = train(self.w_g, selected, eta=cfg.eta, batch=cfg.batch,
                     rng=keyed_rng(3, self.client.id, 1, STEP_GLOBAL)).model
        np.testing.assert_array_equal(update.local_model.to_vector(), w_k.to_vector())
        np.testing.assert_array_equal(update.upload.to_vector(), w_gk.to_vector())
        self.assertEqual(update.high_confidence, len(selected))

    def test_deterministic(self):
        cfg = FedConfig(K=2, seed=5)
        a = client_update(self.client, self.w_g, cfg, 2)
        b = client_update(self.client, self.w_g, cfg, 2)
        np.testing.assert_array_equal(a.local_model.to_vector(), b.local_model.to_vector())
        np.testing.assert_array_equal(a.upload.to_vector(), b.upload.to_vector())

    def test_empty_selection_uploads_received_model(self):
        data = Dataset(np.ones((6, 1)), np.ones(6, dtype=int), 2)
        wrong = constant_model(0)
        client = ClientState(0, wrong, data, data)
        update = client_update(client, wrong, FedConfig(K=1, eta=1e-9), 1)
        self.assertTrue(update.empty_selection)
        self.assertEqual(update.high_confidence, 0)
        self.assertIs(update.upload, wrong)

    def test_settled_client_selects_all_data(self):
        data = Dataset(np.linspace(-1, 1, 8)[:, None], np.zeros(8, dtype=int), 2)
        settled = constant_model(0)
        update = client_update(ClientState(0, settled, data, data), settled, FedConfig(K=1), 1)
        self.assertEqual(update.high_confidence, 8)
        self.assertLess(np.abs(update.upload.to_vector() - settled.to_vector()).max(), 1e-2)

    def test_all_data_ablation_trains_on_every_sample(self):
        data = Dataset(np.ones((6, 1)), np.ones(6, dtype=int), 2)
        wrong = constant_model(0)
        update = client_update(ClientState(0, wrong, data, data), wrong,
                               FedConfig(K=1, eta=1e-9, algo=Algo.AKD_ALLDATA), 1)
        self.assertFalse(update.empty_selection)
        self.assertIsNot(update.upload, wrong)

    def test_single_dist_overwrites_local_model(self):
        cfg = FedConfig(K=2, algo=Algo.AKD_SINGLEDIST, seed=1)
        update = client_update(self.client, self.w_g, cfg, 1)
        expected = train(self.w_g, self.client.train_data, eta=cfg.eta, batch=cfg.batch,
                         rng=keyed_rng(1, self.client.id, 1, STEP_LOCAL)).model
        np.testing.assert_array_equal(update.local_model.to_vector(), expected.to_vector())

    def test_reports_inexactness_of_both_trainings(self):
        cfg = FedConfig(K=2, seed=2)
        update = client_update(self.client, self.w_g, cfg, 1)
        data = self.client.train_data
        selected = select_high_confidence(update.local_model, data)
        self.assertEqual(update.gamma_local,
                         inexactness(self.client.local_model, update.local_model, data, self.w_g, cfg.alpha))
        self.assertEqual(update.gamma_global,
                         inexactness(self.w_g, update.upload, selected, update.local_model, cfg.beta))

    def test_full_batch_step_never_grows_the_gradient(self):
        w_g = Classifier.linear(3, 2)
        cfg = FedConfig(K=2, eta=0.05, batch=10**6, seed=4)
        for t in range(1, 4):
            update = client_update(self.client, w_g, cfg, t)
            self.assertLessEqual(update.gamma_local, 1.0)
            self.assertLessEqual(update.gamma_global, 1.0)

    def test_empty_selection_has_no_global_inexactness(self):
        data = Dataset(np.ones((6, 1)), np.ones(6, dtype=int), 2)
        wrong = constant_model(0)
        update = client_update(ClientState(0, wrong, data, data), wrong, FedConfig(K=1, eta=1e-9), 1)
        self.assertIsNotNone(update.gamma_local)
        self.assertIsNone(update.gamma_global)

    def test_standalone_reports_local_inexactness_only(self):
        update = client_update(self.client, self.w_g, FedConfig(K=2, algo=Algo.STANDALONE), 1)
        self.assertIsNotNone(update.gamma_local)
        self.assertIsNone(update.gamma_global)


class AggregateTests(SimpleTestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.a = Classifier.mlp(3, 2, rng, hidden=4)
        self.b = Classifier.mlp(3, 2, rng, hidden=4)

    def test_single_model_unchanged(self):
        self.assertIs(server_aggregate([self.a], [7.0]), self.a)

    def test_equal_weights_midpoint(self):
        merged = server_aggregate([self.a, self.b], [1, 1])
        np.testing.assert_allclose(merged.to_vector(), (self.a.to_vector() + self.b.to_vector()) / 2)

    def test_uneven_weights(self):
        merged = server_aggregate([self.a, self.b], [1, 3])
        np.testing.assert_allclose(merged.to_vector(), 0.25 * self.a.to_vector() + 0.75 * self.b.to_vector())

    def test_all_zero_weights(self):
        with self.assertRaisesMessage(ValueError, 'all-zero weights'):
            server_aggregate([self.a, self.b], [0, 0])

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            server_aggregate([self.a, Classifier.linear(3, 2)], [1, 1])

    def test_result_within_client_bounds(self):
        rng = np.random.default_rng(4)
        models = [Classifier.mlp(3, 2, rng, hidden=4) for _ in range(5)]
        merged = server_aggregate(models, rng.uniform(0, 10, 5)).to_vector()
        stacked = np.stack([m.to_vector() for m in models])
        self.assertTrue(np.all(merged >= stacked.min(axis=0) - 1e-12))
        self.assertTrue(np.all(merged <= stacked.max(axis=0) + 1e-12))


class ConfigTests(SimpleTestCase):
    def test_correct_count_requires_ablation(self):
        with self.assertRaises(ValueError):
            FedConfig(K=2, agg_weighting=Weighting.CORRECT_COUNT)
        self.assertEqual(FedConfig(K=2, algo='akd_correctagg').weighting, Weighting.CORRECT_COUNT)

    def test_rejects_bad_values(self):
        for bad in ({'eta': 0.0}, {'alpha': -1.0}, {'K': 0}, {'algo': 'fedprox'}):
            with self.assertRaises(ValueError):
                FedConfig(**{'K': 2, **bad})

    def test_dict_round_trip(self):
        cfg = FedConfig(K=3, algo='akd_correctagg', agg_weighting='correct_count', seed=9)
        self.assertEqual(FedConfig(**cfg.to_dict()), cfg)


class RunFederationTests(SimpleTestCase):
    def test_single_client_fedavg_returns_trained_model(self):
        clients, pooled = blob_clients(K=1)
        cfg = FedConfig(K=1, T=1, algo=Algo.FEDAVG, seed=2)
        result = run_federation(cfg, clients, pooled)
        expected = train(Classifier.linear(3, 2), clients[0].train_data, eta=cfg.eta, batch=cfg.batch,
                         rng=keyed_rng(2, clients[0].id, 1, STEP_GLOBAL)).model
        np.testing.assert_array_equal(result.global_model.to_vector(), expected.to_vector())

    def test_perfect_fedakd_without_distillation_matches_fedavg(self):
        clients = [mirrored_client(0, 5), mirrored_client(1, 12), mirrored_client(2, 3)]
        pooled = Dataset.concat([c.train_data for c in clients])
        common = dict(K=3, T=5, eta=0.5, alpha=0.0, beta=0.0, batch=1000, seed=4)
        akd = run_federation(FedConfig(algo=Algo.FEDAKD, **common), clients, pooled)
        avg = run_federation(FedConfig(algo=Algo.FEDAVG, **common), clients, pooled)
        for record in akd.history.rounds:
            self.assertTrue(all(c.I_size == c.D_size for c in record.clients))
        np.testing.assert_array_equal(akd.global_model.to_vector(), avg.global_model.to_vector())
        np.testing.assert_array_equal(akd.history.global_losses(), avg.history.global_losses())

    def test_standalone_never_moves_global_model(self):
        clients, pooled = blob_clients(K=3)
        result = run_federation(FedConfig(K=3, T=4, algo=Algo.STANDALONE), clients, pooled)
        losses = result.history.global_losses()
        np.testing.assert_array_equal(losses, np.full(4, losses[0]))
        self.assertAlmostEqual(losses[0], np.log(2))

    def test_client_order_does_not_matter(self):
        clients, pooled = blob_clients(K=4, seed=1)
        cfg = FedConfig(K=4, T=3, seed=8)
        forward = run_federation(cfg, clients, pooled)
        shuffled = run_federation(cfg, [clients[i] for i in (2, 0, 3, 1)], pooled)
        np.testing.assert_array_equal(forward.global_model.to_vector(), shuffled.global_model.to_vector())

    def test_workers_do_not_change_results(self):
        clients, pooled = blob_clients(K=4, seed=2)
        serial = run_federation(FedConfig(K=4, T=2, seed=1), clients, pooled)
        threaded = run_federation(FedConfig(K=4, T=2, seed=1, workers=4), clients, pooled)
        np.testing.assert_array_equal(serial.global_model.to_vector(), threaded.global_model.to_vector())

    def test_correct_count_weighting(self):
        clients, pooled = blob_clients(K=3, seed=3)
        result = run_federation(FedConfig(K=3, T=2, algo=Algo.AKD_CORRECTAGG), clients, pooled)
        for record in result.history.rounds:
            for c in record.clients:
                self.assertLessEqual(c.I_size, c.D_size)

    def test_history_shape_and_csv(self):
        clients, pooled = blob_clients(K=3)
        result = run_federation(FedConfig(K=3, T=2, model_kind='mlp1', hidden=8), clients, pooled)
        self.assertEqual(len(result.history), 2)
        self.assertEqual(result.history.final_accuracies().shape, (3,))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / 'history.csv'
            result.history.to_csv(path)
            lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'round,global_loss,client,acc_local,I_size,D_size,gamma_local,gamma_global')
        self.assertEqual(len(lines), 1 + 2 * 3)

    def test_records_inexactness_per_client(self):
        clients, pooled = blob_clients(K=3)
        result = run_federation(FedConfig(K=3, T=3, batch=10**6, seed=1), clients, pooled)
        gamma = result.history.max_inexactness()
        self.assertIsNotNone(gamma)
        self.assertLessEqual(gamma, 1.0)
        for record in result.history.rounds:
            self.assertTrue(all(c.gamma_global is not None for c in record.clients))

    def test_pooled_evaluation_uses_the_given_test_set(self):
        clients, pooled = blob_clients(K=3, seed=5)
        held_out = make_blobs_dataset(2, 3, 2.0, 90, np.random.default_rng(11))
        result = run_federation(FedConfig(K=3, T=2, evaluation='pooled'), clients, pooled, test_set=held_out)
        for c in result.history.rounds[-1].clients:
            self.assertEqual(c.acc_local, accuracy(result.local_models[c.client], held_out))

    def test_test_set_must_match_feature_width(self):
        clients, pooled = blob_clients(K=2)
        with self.assertRaises(ValueError):
            run_federation(FedConfig(K=2, T=1), clients, pooled,
                           test_set=make_blobs_dataset(2, 4, 2.0, 20, np.random.default_rng(0)))

    def test_client_count_must_match(self):
        clients, pooled = blob_clients(K=3)
        with self.assertRaises(ValueError):
            run_federation(FedConfig(K=2), clients, pooled)

    def test_shared_initial_model(self):
        clients, pooled = blob_clients(K=2)
        cfg = FedConfig(K=2, T=1, model_kind='mlp1', hidden=5, seed=6)
        result = run_federation(cfg, clients, pooled)
        init = Classifier.mlp(3, 2, keyed_rng(6, INIT_CLIENT, 0, 0), hidden=5)
        again = run_federation(cfg, clients, pooled, initial_model=init)
        np.testing.assert_array_equal(result.global_model.to_vector(), again.global_model.to_vector())


class ConvergenceTests(SimpleTestCase):
    def test_global_loss_halves_on_separated_blobs(self):
        clients, pooled = blob_clients(K=4, seed=7, separation=4.0, dims=4, n=2000, radius_C=2.0)
        cfg = FedConfig(K=4, T=40, eta=0.05, batch=10**6, seed=7)
        losses = run_federation(cfg, clients, pooled).history.global_losses()
        self.assertLess(losses[-1], 0.5 * losses[0])

    def test_global_loss_settles_on_desk_ics(self):
        # full-batch steps: one gradient step per training phase
        for seed in range(5):
            clients, pooled = desk_ics_clients(seed)
            cfg = FedConfig(K=8, T=40, eta=0.05, batch=10**6, seed=seed)
            losses = run_federation(cfg, clients, pooled).history.global_losses()
            with self.subTest(seed=seed):
                self.assertLess(losses[-1], losses[0])
                self.assertLessEqual(np.max(np.diff(losses[2:])), 1e-3)


class SelectionRationaleTests(SimpleTestCase):
    def test_correct_subsets_never_raise_ce_at_local_model(self):
        clients, _ = blob_clients(K=1, seed=4)
        data = clients[0].train_data
        w_k = train(Classifier.linear(3, 2), data, eta=0.1, epochs=5, rng=np.random.default_rng(0)).model
        correct = select_high_confidence(w_k, data)
        full_loss = ce_loss(w_k, data)
        # binary: correct rows cost at most ln 2, misclassified rows at least ln 2
        for size in range(10, len(correct) + 1, 10):
            loss = ce_loss(w_k, correct.subset(range(size)))
            self.assertLessEqual(loss, np.log(2))
        self.assertLessEqual(ce_loss(w_k, correct), full_loss)
