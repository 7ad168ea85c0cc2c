"""
Linear softmax and one-hidden-layer ReLU classifiers as immutable parameter containers
"""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.db import models
from scipy.special import softmax

DEFAULT_HIDDEN = 32


class Kind(models.TextChoices):
    LINEAR = 'linear', 'Linear softmax'
    MLP1 = 'mlp1', 'One hidden ReLU layer'


PARAM_NAMES = {
    Kind.LINEAR: ('W', 'b'),
    Kind.MLP1: ('W1', 'b1', 'W2', 'b2'),
}


@dataclass(frozen=True, eq=False)
class Classifier:
    """
    Parameters of a softmax classifier.

    linear: W (d x C), b (C)
    mlp1:   W1 (d x H), b1 (H), ReLU, W2 (H x C), b2 (C)

    Class probabilities are softmax(logits / tau).
    """
    kind: str
    params: dict = field(repr=False)
    tau: float = 1.0

    def __post_init__(self):
        kind = Kind(self.kind)
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        names = PARAM_NAMES[kind]
        if set(self.params) != set(names):
            raise ValueError(f"{kind.value} classifier needs parameters {names}, got {sorted(self.params)}")
        params = {}
        for name in names:
            value = np.array(self.params[name], dtype=np.float64)
            if not np.all(np.isfinite(value)):
                raise ValueError(f"parameter {name} is not finite")
            value.setflags(write=False)
            params[name] = value
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'params', params)
        self._check_shapes()

    def _check_shapes(self):
        p = self.params
        if self.kind == Kind.LINEAR:
            ok = p['W'].ndim == 2 and p['b'].shape == (p['W'].shape[1],)
        else:
            ok = (p['W1'].ndim == 2 and p['W2'].ndim == 2
                  and p['b1'].shape == (p['W1'].shape[1],)
                  and p['W2'].shape[0] == p['W1'].shape[1]
                  and p['b2'].shape == (p['W2'].shape[1],))
        if not ok:
            raise ValueError(f"inconsistent parameter shapes for {self.kind.value}: {self.shapes()}")

    @classmethod
    def linear(cls, d, num_classes, tau=1.0):
        """Zero-initialized, so every row starts at the uniform distribution"""
        return cls(Kind.LINEAR, {'W': np.zeros((d, num_classes)), 'b': np.zeros(num_classes)}, tau)

    @classmethod
    def mlp(cls, d, num_classes, rng, hidden=DEFAULT_HIDDEN, tau=1.0):
        """He-scaled normal weights, zero biases"""
        return cls(Kind.MLP1, {
            'W1': rng.standard_normal((d, hidden)) * np.sqrt(2.0 / d),
            'b1': np.zeros(hidden),
            'W2': rng.standard_normal((hidden, num_classes)) * np.sqrt(2.0 / hidden),
            'b2': np.zeros(num_classes),
        }, tau)

    @classmethod
    def initial(cls, kind, d, num_classes, rng, hidden=DEFAULT_HIDDEN, tau=1.0):
        if Kind(kind) == Kind.LINEAR:
            return cls.linear(d, num_classes, tau)
        return cls.mlp(d, num_classes, rng, hidden, tau)

    @property
    def names(self):
        return PARAM_NAMES[self.kind]

    @property
    def in_dim(self):
        return self.params[self.names[0]].shape[0]

    @property
    def num_classes(self):
        return self.params[self.names[-1]].shape[0]

    @property
    def hidden_dim(self):
        return self.params['b1'].shape[0] if self.kind == Kind.MLP1 else 0

    def shapes(self):
        return {name: self.params[name].shape for name in self.names}

    def with_params(self, params):
        return Classifier(self.kind, params, self.tau)

    def same_shape(self, other):
        return self.kind == other.kind and self.shapes() == other.shapes()

    def to_vector(self):
        return np.concatenate([self.params[name].ravel() for name in self.names])

    def from_vector(self, vector):
        vector = np.asarray(vector, dtype=np.float64)
        params, offset = {}, 0
        for name in self.names:
            shape = self.params[name].shape
            size = int(np.prod(shape))
            params[name] = vector[offset:offset + size].reshape(shape)
            offset += size
        if offset != vector.size:
            raise ValueError(f"vector has {vector.size} entries, model needs {offset}")
        return self.with_params(params)

    def to_json(self):
        return {
            'kind': self.kind.value,
            'dims': {'d': self.in_dim, 'hidden': self.hidden_dim, 'classes': self.num_classes},
            'tau': self.tau,
            'params': {
                name: {'shape': list(self.params[name].shape), 'data': self.params[name].ravel().tolist()}
                for name in self.names
            },
        }

    @classmethod
    def from_json(cls, document):
        params = {
            name: np.asarray(entry['data'], dtype=np.float64).reshape(entry['shape'])
            for name, entry in document['params'].items()
        }
        return cls(document['kind'], params, float(document.get('tau', 1.0)))

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def _check_input(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.in_dim:
        raise ValueError(f"expected an n x {model.in_dim} matrix, got shape {X.shape}")
    return X


def forward_pass(model, X):
    """Return (raw logits, hidden pre-activations or None) for a checked input"""
    p = model.params
    if model.kind == Kind.LINEAR:
        return X @ p['W'] + p['b'], None
    pre = X @ p['W1'] + p['b1']
    return np.maximum(pre, 0.0) @ p['W2'] + p['b2'], pre


def forward(model, X):
    """Row-wise class probabilities softmax(logits / tau)"""
    X = _check_input(model, X)
    logits, _ = forward_pass(model, X)
    return softmax(logits / model.tau, axis=1)


def hidden(model, X):
    """Representation fed to the output layer: raw features (linear) or ReLU activations (mlp1)"""
    X = _check_input(model, X)
    if model.kind == Kind.LINEAR:
        return X
    _, pre = forward_pass(model, X)
    return np.maximum(pre, 0.0)


def predict(model, X):
    # argmax breaks ties toward the lowest class index
    return np.argmax(forward(model, X), axis=1)


def accuracy(model, data):
    if len(data) == 0:
        raise ValueError("empty data")
    return float(np.mean(predict(model, data.features) == data.labels))
