import logging
from typing import NamedTuple

import numpy as np

from .losses import _check_pair, objective_gradient
from .nets import forward

logger = logging.getLogger(__name__)


class TrainResult(NamedTuple):
    model: object
    steps: int
    skipped: bool = False


def train(model, data, teacher=None, kd_coeff=0.0, eta=0.05, epochs=1, batch=32, rng=None):
    """
    Mini-batch SGD on CE(model; data) + kd_coeff * KD(model, teacher; data).

    Rows are reshuffled every epoch with `rng` and the last partial batch is
    kept. The input model is left untouched; empty data returns it unchanged
    with `skipped` set.
    """
    if eta < 0:
        raise ValueError(f"learning rate must be nonnegative, got {eta}")
    if epochs < 1 or batch < 1:
        raise ValueError(f"epochs and batch must be >= 1, got {epochs} and {batch}")
    if len(data) == 0:
        logger.debug("train called on empty data; model left unchanged")
        return TrainResult(model, 0, skipped=True)
    if rng is None:
        rng = np.random.default_rng()

    use_teacher = teacher is not None and kd_coeff != 0.0
    teacher_probs = None
    if use_teacher:
        _check_pair(model, teacher)
        teacher_probs = forward(teacher, data.features)

    params = {name: value.copy() for name, value in model.params.items()}
    current = model
    steps = 0
    n = len(data)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            grad = objective_gradient(
                current, data.features[idx], data.labels[idx],
                teacher_probs[idx] if use_teacher else None, kd_coeff,
            )
            for name in params:
                params[name] -= eta * grad[name]
            current = model.with_params(params)
            steps += 1
    return TrainResult(current, steps)


def gradient_norm(model, data, teacher=None, kd_coeff=0.0):
    """Euclidean norm of the full-data gradient of CE + kd_coeff * KD at `model`"""
    teacher_probs = None
    if teacher is not None and kd_coeff != 0.0:
        _check_pair(model, teacher)
        teacher_probs = forward(teacher, data.features)
    grad = objective_gradient(model, data.features, data.labels, teacher_probs, kd_coeff)
    return float(np.sqrt(sum(np.sum(g ** 2) for g in grad.values())))


def inexactness(start, end, data, teacher=None, kd_coeff=0.0):
    """
    Smallest gamma for which `end` is a gamma-inexact solution of
    CE + kd_coeff * KD(., teacher) started from `start`:
    |grad(end)| / |grad(start)|.

    None when `start` is already stationary or `data` is empty.
    """
    if len(data) == 0:
        return None
    initial = gradient_norm(start, data, teacher, kd_coeff)
    if initial == 0.0:
        return None
    return gradient_norm(end, data, teacher, kd_coeff) / initial
