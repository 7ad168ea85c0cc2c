"""
Labeled feature matrices, the unit every partitioner, trainer and metric works on
"""
import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _integer_labels(labels):
    labels = np.asarray(labels)
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.isfinite(labels)) or not np.all(np.equal(np.mod(labels, 1), 0)):
            raise ValueError("labels must be integer class indices")
    return labels.astype(np.int64)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix (n x d) paired with integer class labels in [0, num_classes)"""
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels)
        if features.ndim != 2:
            raise ValueError(f"features must be a matrix, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError(
                f"label count {labels.shape[0] if labels.ndim else 0} does not match "
                f"feature rows {features.shape[0]}"
            )
        labels = _integer_labels(labels)
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain NaN or Inf")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)

    @classmethod
    def from_arrays(cls, features, labels, num_classes=None):
        labels = _integer_labels(labels)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if labels.size else 1
        return cls(features, labels, int(num_classes))

    @classmethod
    def empty(cls, dim, num_classes):
        return cls(np.empty((0, dim)), np.empty(0, dtype=np.int64), num_classes)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")
        dims = {p.dim for p in parts}
        if len(dims) != 1:
            raise ValueError(f"cannot concatenate datasets of dimensions {sorted(dims)}")
        return cls(
            np.vstack([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            max(p.num_classes for p in parts),
        )

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)

    def class_indices(self, label):
        return np.flatnonzero(self.labels == label)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)

    def to_csv(self, path, precision=17):
        """Write `f0,...,f{d-1},label` rows; floats keep `precision` significant digits"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fmt = f'.{precision}g'
        with path.open('w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow([f'f{j}' for j in range(self.dim)] + ['label'])
            for row, label in zip(self.features, self.labels):
                writer.writerow([format(value, fmt) for value in row] + [int(label)])

    @classmethod
    def from_csv(cls, path, num_classes=None):
        path = Path(path)
        with path.open(newline='') as handle:
            reader = csv.reader(handle)
            header = next(reader, None)
            if not header or header[-1] != 'label':
                raise ValueError(f"{path}: expected a header ending in 'label'")
            dim = len(header) - 1
            rows = [row for row in reader if row]
        features = np.array([[float(v) for v in row[:dim]] for row in rows], dtype=np.float64)
        features = features.reshape(len(rows), dim)
        labels = np.array([int(row[dim]) for row in rows], dtype=np.int64)
        return cls.from_arrays(features, labels, num_classes)
