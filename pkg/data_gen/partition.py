"""
Non-IID federated partitions: power-law sizes (POW), Dirichlet labels (DIR),
incremental classes (CLA) and Gaussian importance-sampled covariate shift
(BCS / ICS).

Every partitioner is a pure function of its inputs plus an explicit numpy
Generator. Per-client randomness comes from `rng.spawn(K)`, so stream k always
belongs to client k.
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from django.db import models
from sklearn.datasets import make_blobs
from sklearn.model_selection import train_test_split

from .dataset import Dataset
from .gaussian import fit_gaussian, importance_weights, sample_shift_vector

logger = logging.getLogger(__name__)


class Scheme(models.TextChoices):
    POW = 'pow', 'Imbalanced dataset sizes'
    BCS = 'bcs', 'Balanced covariate shift'
    ICS = 'ics', 'Imbalanced covariate shift'
    CLA = 'cla', 'Incremental class count'
    DIR = 'dir', 'Dirichlet label skew'


# Label-skew schemes are evaluated on one global test set held out before partitioning
HELD_OUT_TEST_SCHEMES = frozenset({Scheme.CLA, Scheme.DIR})


def powerlaw_sizes(n_total, K, exponent=1.0):
    """
    Split n_total into K sizes proportional to k^-exponent.

    Floors first, then the remainder goes one per client in order of largest
    fractional part (ties to the lower index), so the sizes sum to n_total.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if n_total < K:
        raise ValueError("n_total too small for K")
    shares = np.arange(1, K + 1, dtype=np.float64) ** -float(exponent)
    raw = n_total * shares / shares.sum()
    sizes = np.floor(raw).astype(np.int64)
    remainder = int(n_total - sizes.sum())
    fractions = raw - sizes
    # lexsort: last key is primary
    order = np.lexsort((np.arange(K), -fractions))
    sizes[order[:remainder]] += 1
    if np.any(sizes < 1):
        raise ValueError("n_total too small for K")
    return sizes


def _split_by_sizes(data, order, sizes):
    bounds = np.cumsum(sizes)[:-1]
    return [data.subset(chunk) for chunk in np.split(order, bounds)]


def partition_pow(data, K, rng, exponent=1.0):
    """Shuffle, then cut into power-law sized clients"""
    sizes = powerlaw_sizes(len(data), K, exponent)
    return _split_by_sizes(data, rng.permutation(len(data)), sizes)


def dirichlet_counts(n, p):
    """floor(p_k * n) per client; leftovers go to the argmax-p client so nothing is dropped"""
    p = np.asarray(p, dtype=np.float64)
    counts = np.floor(p * n).astype(np.int64)
    counts[int(np.argmax(p))] += n - int(counts.sum())
    return counts


def partition_dirichlet(data, K, alpha, rng):
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    assigned = [[] for _ in range(K)]
    for label in range(data.num_classes):
        members = data.class_indices(label)
        if members.size == 0:
            continue
        members = rng.permutation(members)
        p = rng.dirichlet(np.full(K, float(alpha)))
        counts = dirichlet_counts(members.size, p)
        for k, chunk in enumerate(np.split(members, np.cumsum(counts)[:-1])):
            assigned[k].append(chunk)
    return [
        data.subset(np.concatenate(chunks) if chunks else np.empty(0, dtype=np.int64))
        for chunks in assigned
    ]


def partition_cla(data, K, rng):
    """
    Client k (1-based) sees classes 0..k-1 only.

    Each client targets |D|/K samples (floor, remainder to the last client),
    split evenly over its classes. When a class holds fewer rows than its
    share, the client shrinks to k times its smallest class pool so the split
    stays even. Within a client samples are drawn without replacement,
    different clients may share samples.
    """
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if data.num_classes < K:
        raise ValueError(f"CLA needs at least {K} classes, dataset has {data.num_classes}")
    base = len(data) // K
    sizes = [base] * (K - 1) + [base + len(data) % K]
    by_class = [data.class_indices(label) for label in range(K)]
    clients = []
    for k, size in enumerate(sizes, start=1):
        pools = np.array([by_class[label].size for label in range(k)])
        if np.any(pools == 0):
            label = int(np.argmin(pools))
            raise ValueError(f"insufficient samples in class {label}: client {k} needs it, have 0")
        if size > k * pools.min():
            logger.info("CLA client %d: class %d holds %d rows, size capped from %d to %d",
                        k, int(np.argmin(pools)), int(pools.min()), size, k * int(pools.min()))
        size = min(size, k * int(pools.min()))
        per_class = np.full(k, size // k, dtype=np.int64)
        per_class[:size % k] += 1
        picks = [rng.choice(by_class[label], size=take, replace=False) for label, take in enumerate(per_class)]
        clients.append(data.subset(np.concatenate(picks)))
    return clients


@dataclass(frozen=True)
class ShiftSpec:
    """Squared Mahalanobis radius C and the number of draws per client"""
    radius_C: float
    sizes: tuple

    def __post_init__(self):
        if self.radius_C < 0:
            raise ValueError(f"radius_C must be nonnegative, got {self.radius_C}")
        sizes = tuple(int(s) for s in self.sizes)
        if any(s < 0 for s in sizes):
            raise ValueError("client sizes must be nonnegative")
        object.__setattr__(self, 'sizes', sizes)

    @property
    def total(self):
        return sum(self.sizes)

    @classmethod
    def balanced(cls, total, K, radius_C):
        base = np.full(K, total // K, dtype=np.int64)
        base[:total % K] += 1
        return cls(radius_C, tuple(base))

    @classmethod
    def powerlaw(cls, total, K, radius_C, exponent=1.0):
        return cls(radius_C, tuple(powerlaw_sizes(total, K, exponent)))


class ShiftedClients(NamedTuple):
    clients: list
    shifts: np.ndarray


def generate_covariate_shift(data, spec, K, rng):
    """
    Importance-sample K covariate-shifted clients from `data`.

    The baseline Gaussian is fitted once; client k gets mean mu + delta_k with
    delta_k at squared Mahalanobis radius C and draws spec.sizes[k] rows with
    replacement, weighted by the shifted density. Labels travel with rows.
    """
    if len(spec.sizes) != K:
        raise ValueError(f"spec has {len(spec.sizes)} sizes for {K} clients")
    if any(size < 1 for size in spec.sizes):
        raise ValueError("every client needs at least one draw")
    base = fit_gaussian(data)
    clients, shifts = [], []
    for k, (stream, size) in enumerate(zip(rng.spawn(K), spec.sizes)):
        delta = sample_shift_vector(base, spec.radius_C, stream)
        weights = importance_weights(data, base.mean + delta, base)
        picks = stream.choice(len(data), size=size, replace=True, p=weights)
        clients.append(data.subset(picks))
        shifts.append(delta)
        logger.debug("client %d: %d draws, |delta|=%.4f", k, size, float(np.linalg.norm(delta)))
    return ShiftedClients(clients, np.array(shifts).reshape(K, data.dim))


class Partition(NamedTuple):
    scheme: str
    clients: list
    shifts: np.ndarray | None


def build_partition(scheme, data, K, rng, *, exponent=1.0, radius_C=5.0,
                    dirichlet_alpha=1.0, sample_fraction=0.5):
    """Dispatch to the partitioner for `scheme`; shift schemes draw floor(|D| * sample_fraction) rows"""
    scheme = Scheme(scheme)
    if scheme == Scheme.POW:
        return Partition(scheme, partition_pow(data, K, rng, exponent), None)
    if scheme == Scheme.DIR:
        return Partition(scheme, partition_dirichlet(data, K, dirichlet_alpha, rng), None)
    if scheme == Scheme.CLA:
        return Partition(scheme, partition_cla(data, K, rng), None)

    total = int(np.floor(len(data) * sample_fraction))
    if scheme == Scheme.BCS:
        spec = ShiftSpec.balanced(total, K, radius_C)
    else:
        spec = ShiftSpec.powerlaw(total, K, radius_C, exponent)
    shifted = generate_covariate_shift(data, spec, K, rng)
    sizes = [len(c) for c in shifted.clients]
    if tuple(sizes) != spec.sizes:
        raise RuntimeError(f"generated sizes {sizes} differ from declared {list(spec.sizes)}")
    logger.info("%s partition: K=%d C=%s sizes=%s", scheme.value, K, radius_C, sizes)
    return Partition(scheme, shifted.clients, shifted.shifts)


def make_blobs_dataset(classes, dims, separation, n, rng):
    """Unit-std Gaussian blobs on a line through the origin, consecutive means `separation` apart"""
    direction = np.ones(dims) / np.sqrt(dims)
    offsets = np.arange(classes) - (classes - 1) / 2
    centers = separation * offsets[:, None] * direction
    features, labels = make_blobs(
        n_samples=n, centers=centers, cluster_std=1.0,
        random_state=int(rng.integers(2**31 - 1)),
    )
    return Dataset(features, labels, classes)


def split_train_test(data, test_fraction, rng):
    if len(data) < 2:
        raise ValueError(f"need at least 2 samples to split, got {len(data)}")
    train_idx, test_idx = train_test_split(
        np.arange(len(data)), test_size=test_fraction,
        random_state=int(rng.integers(2**31 - 1)),
    )
    return data.subset(np.sort(train_idx)), data.subset(np.sort(test_idx))
