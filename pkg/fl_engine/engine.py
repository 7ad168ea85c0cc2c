"""
FedAKD rounds: three-step client update, weighted server aggregation, and the
FedAvg / Standalone baselines and ablations sharing the same loop.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from classifiers.losses import ce_loss
from classifiers.nets import Classifier, accuracy, predict
from classifiers.training import inexactness, train
from data_gen.dataset import Dataset

from .config import DISTILLING, INIT_CLIENT, STEP_GLOBAL, STEP_LOCAL, Algo, Evaluation, Weighting, keyed_rng
from .history import ClientRecord, RoundHistory, RoundRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClientState:
    id: int
    local_model: Classifier
    train_data: Dataset
    test_data: Dataset

    def __post_init__(self):
        if len(self.train_data) == 0 or len(self.test_data) == 0:
            raise ValueError(f"client {self.id}: train and test data must be nonempty")
        if self.local_model.in_dim != self.train_data.dim:
            raise ValueError(
                f"client {self.id}: model expects {self.local_model.in_dim} features, data has {self.train_data.dim}"
            )


class ClientUpdate(NamedTuple):
    client_id: int
    local_model: Classifier
    upload: Classifier | None
    high_confidence: int
    empty_selection: bool = False
    gamma_local: float | None = None
    gamma_global: float | None = None


class FederationResult(NamedTuple):
    history: RoundHistory
    global_model: Classifier
    local_models: dict


def select_high_confidence(model, data):
    """Samples the model classifies correctly, in their original order"""
    if len(data) == 0:
        return data
    return data.subset(np.flatnonzero(predict(model, data.features) == data.labels))


def _correct_count(model, data):
    return int(np.sum(predict(model, data.features) == data.labels))


def client_update(client, w_g, cfg, round_index):
    """
    One client's share of a round under `cfg.algo`.

    FedAKD: (1) train w_k on D_k with w_g as a frozen teacher (alpha);
    (2) I = samples the new w_k predicts correctly; (3) train a copy of w_g on
    I with the new w_k as a frozen teacher (beta) and upload it. An empty I
    uploads w_g unchanged. The two trainings draw from separate keyed streams.

    The update also reports how inexact each training was: the full-data
    gradient norm of its objective after training over the norm before.
    """
    local_rng = keyed_rng(cfg.seed, client.id, round_index, STEP_LOCAL)
    global_rng = keyed_rng(cfg.seed, client.id, round_index, STEP_GLOBAL)
    fit = dict(eta=cfg.eta, epochs=cfg.local_epochs, batch=cfg.batch)
    data = client.train_data

    if cfg.algo == Algo.STANDALONE:
        w_k = train(client.local_model, data, rng=local_rng, **fit).model
        return ClientUpdate(client.id, w_k, None, _correct_count(w_k, data),
                            gamma_local=inexactness(client.local_model, w_k, data))

    if cfg.algo == Algo.FEDAVG:
        # the global copy trains on the step-3 stream, so FedAvg and FedAKD with
        # alpha = beta = 0 and I = D follow the same global trajectory
        w_k = train(w_g, data, rng=global_rng, **fit).model
        gamma = inexactness(w_g, w_k, data)
        return ClientUpdate(client.id, w_k, w_k, _correct_count(w_k, data),
                            gamma_local=gamma, gamma_global=gamma)

    if cfg.algo == Algo.AKD_SINGLEDIST:
        start, teacher, coeff = w_g, None, 0.0
    else:
        start, teacher, coeff = client.local_model, w_g, cfg.alpha
    w_k = train(start, data, teacher=teacher, kd_coeff=coeff, rng=local_rng, **fit).model
    gamma_local = inexactness(start, w_k, data, teacher, coeff)

    selected = select_high_confidence(w_k, data)
    distill_on = data if cfg.algo == Algo.AKD_ALLDATA else selected
    if len(distill_on) == 0:
        logger.info("client %s round %s: no correctly predicted samples, uploading w_g unchanged",
                    client.id, round_index)
        return ClientUpdate(client.id, w_k, w_g, 0, empty_selection=True, gamma_local=gamma_local)
    w_gk = train(w_g, distill_on, teacher=w_k, kd_coeff=cfg.beta, rng=global_rng, **fit).model
    return ClientUpdate(client.id, w_k, w_gk, len(selected), gamma_local=gamma_local,
                        gamma_global=inexactness(w_g, w_gk, distill_on, w_k, cfg.beta))


def server_aggregate(models, weights):
    """Parameter-wise convex combination with weights normalized to sum to one"""
    models = list(models)
    weights = np.asarray(weights, dtype=np.float64)
    if not models:
        raise ValueError("no models to aggregate")
    if weights.shape != (len(models),):
        raise ValueError(f"{weights.size} weights for {len(models)} models")
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    if not np.any(weights > 0):
        raise ValueError("all-zero weights")
    first = models[0]
    for other in models[1:]:
        if not first.same_shape(other):
            raise ValueError(f"cannot aggregate {first.shapes()} with {other.shapes()}")
    if len(models) == 1:
        return first
    normalized = weights / weights.sum()
    params = {
        name: sum(w * m.params[name] for w, m in zip(normalized, models))
        for name in first.names
    }
    return first.with_params(params)


def _evaluate(model, client, pooled_test, cfg):
    test = pooled_test if cfg.evaluation == Evaluation.POOLED else client.test_data
    return accuracy(model, test)


def run_federation(cfg, clients, pooled, initial_model=None, test_set=None):
    """
    Run cfg.T rounds of cfg.algo over `clients`.

    Pooled evaluation uses `test_set` when given, otherwise the union of the
    clients' test splits.

    Every local model and the global model start from one shared initial
    model. After each round the history records the global CE loss on
    `pooled` and every client's accuracy with the model it keeps. Uploads
    are aggregated in client-id order, so the result does not depend on the
    order of `clients`.
    """
    if cfg.K != len(clients):
        raise ValueError(f"config expects K={cfg.K} clients, got {len(clients)}")
    ids = [c.id for c in clients]
    if len(set(ids)) != len(ids):
        raise ValueError("client ids must be unique")
    clients = sorted(clients, key=lambda c: c.id)
    dim, num_classes = pooled.dim, pooled.num_classes

    if initial_model is None:
        initial_model = Classifier.initial(
            cfg.model_kind, dim, num_classes, keyed_rng(cfg.seed, INIT_CLIENT, 0, 0),
            hidden=cfg.hidden, tau=cfg.tau,
        )
    w_g = initial_model
    clients = [replace(c, local_model=initial_model) for c in clients]
    pooled_test = test_set if test_set is not None else Dataset.concat([c.test_data for c in clients])
    if pooled_test.dim != dim:
        raise ValueError(f"test set has {pooled_test.dim} features, clients have {dim}")
    history = RoundHistory(algo=cfg.algo)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        for t in range(1, cfg.T + 1):
            received = w_g
            updates = list(pool.map(lambda c: client_update(c, received, cfg, t), clients))

            if cfg.algo != Algo.STANDALONE:
                uploads = [u.upload for u in updates]
                if cfg.weighting == Weighting.CORRECT_COUNT:
                    weights = [u.high_confidence for u in updates]
                else:
                    weights = [len(c.train_data) for c in clients]
                if sum(weights) == 0:
                    logger.warning("round %d: no client has correct samples, keeping w_g", t)
                else:
                    w_g = server_aggregate(uploads, weights)

            keep_global = cfg.algo == Algo.FEDAVG
            clients = [
                replace(c, local_model=w_g if keep_global else u.local_model)
                for c, u in zip(clients, updates)
            ]
            record = RoundRecord(
                round=t,
                global_loss=ce_loss(w_g, pooled),
                clients=tuple(
                    ClientRecord(
                        client=c.id,
                        acc_local=_evaluate(c.local_model, c, pooled_test, cfg),
                        I_size=u.high_confidence,
                        D_size=len(c.train_data),
                        empty_selection=u.empty_selection,
                        gamma_local=u.gamma_local,
                        gamma_global=u.gamma_global,
                    )
                    for c, u in zip(clients, updates)
                ),
            )
            history.append(record)
            logger.debug("%s round %d: global loss %.6f", cfg.algo, t, record.global_loss)

    return FederationResult(history, w_g, {c.id: c.local_model for c in clients})
