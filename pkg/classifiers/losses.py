"""
Cross-entropy and soft-label distillation losses with exact analytic gradients.

With p = softmax(z / tau), the mean CE gradient with respect to the raw
logits z is (p - onehot(y)) / (n tau) and the mean KD gradient is
(p - q_teacher) / (n tau); both are pushed back through the network by
`backprop`. The teacher is a constant and never receives a gradient.
"""
import numpy as np

from .nets import Kind, _check_input, forward

PROB_FLOOR = 1e-12


def _require_rows(data):
    if len(data) == 0:
        raise ValueError("empty data")


def _check_pair(student, teacher):
    if student.in_dim != teacher.in_dim or student.num_classes != teacher.num_classes:
        raise ValueError(
            f"student ({student.in_dim}->{student.num_classes}) and teacher "
            f"({teacher.in_dim}->{teacher.num_classes}) dimensions differ"
        )


def ce_loss(model, data):
    _require_rows(data)
    probs = forward(model, data.features)
    true_class = probs[np.arange(len(data)), data.labels]
    return float(-np.mean(np.log(np.maximum(true_class, PROB_FLOOR))))


def kd_loss(student, teacher, data):
    """Mean cross-entropy of the student's distribution against the teacher's"""
    _require_rows(data)
    _check_pair(student, teacher)
    target = forward(teacher, data.features)
    probs = forward(student, data.features)
    return float(-np.mean(np.sum(target * np.log(np.maximum(probs, PROB_FLOOR)), axis=1)))


def backprop(model, X, logit_grad):
    """Parameter gradient given dLoss/d(raw logits) for each row of X"""
    p = model.params
    if model.kind == Kind.LINEAR:
        return {'W': X.T @ logit_grad, 'b': logit_grad.sum(axis=0)}
    pre = X @ p['W1'] + p['b1']
    act = np.maximum(pre, 0.0)
    back = (logit_grad @ p['W2'].T) * (pre > 0)
    return {
        'W1': X.T @ back,
        'b1': back.sum(axis=0),
        'W2': act.T @ logit_grad,
        'b2': logit_grad.sum(axis=0),
    }


def objective_gradient(model, X, labels, teacher_probs=None, kd_coeff=0.0):
    """Gradient of CE(model) + kd_coeff * KD(model, teacher) averaged over the rows of X"""
    X = _check_input(model, X)
    n = X.shape[0]
    probs = forward(model, X)
    logit_grad = probs.copy()
    logit_grad[np.arange(n), labels] -= 1.0
    if teacher_probs is not None and kd_coeff != 0.0:
        logit_grad += kd_coeff * (probs - teacher_probs)
    logit_grad /= n * model.tau
    return backprop(model, X, logit_grad)


def grad_ce(model, data):
    _require_rows(data)
    return objective_gradient(model, data.features, data.labels)


def grad_kd(student, teacher, data):
    _require_rows(data)
    _check_pair(student, teacher)
    X = _check_input(student, data.features)
    probs = forward(student, X)
    target = forward(teacher, X)
    return backprop(student, X, (probs - target) / (X.shape[0] * student.tau))
