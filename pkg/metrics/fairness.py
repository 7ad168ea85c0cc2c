"""
Collaborative fairness (CF) and client accuracy summaries.

CF is 100 x the Pearson correlation between each client's standalone
accuracy and its accuracy after federation.
"""
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import pearsonr


class UndefinedCorrelation(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AccuracyProfile:
    acc_standalone: np.ndarray
    acc_federated: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.acc_standalone, dtype=np.float64)
        p = np.asarray(self.acc_federated, dtype=np.float64)
        if s.shape != p.shape or s.ndim != 1:
            raise ValueError(f"accuracy vectors differ in shape: {s.shape} vs {p.shape}")
        if np.any((s < 0) | (s > 1)) or np.any((p < 0) | (p > 1)):
            raise ValueError("accuracies must lie in [0, 1]")
        object.__setattr__(self, 'acc_standalone', s)
        object.__setattr__(self, 'acc_federated', p)

    def __len__(self):
        return self.acc_federated.shape[0]


class Summary(NamedTuple):
    max_acc: float
    avg_acc: float
    cf: float | None

    @property
    def cf_defined(self):
        return self.cf is not None


def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"vectors differ in shape: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise UndefinedCorrelation("undefined correlation: need at least two points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelation("undefined correlation")
    return float(np.clip(pearsonr(x, y).statistic, -1.0, 1.0))


def cf_coefficient(profile):
    return 100.0 * pearson(profile.acc_standalone, profile.acc_federated)


def summarize(profile, history=None):
    """Max and mean federated accuracy plus CF (None when the correlation is undefined)"""
    if len(profile) < 1:
        raise ValueError("need at least one client")
    if history is not None and len(history.final_accuracies()) != len(profile):
        raise ValueError("history and profile disagree on the number of clients")
    acc = profile.acc_federated
    try:
        cf = cf_coefficient(profile)
    except UndefinedCorrelation:
        cf = None
    return Summary(float(acc.max()), float(acc.mean()), cf)


def aggregate_runs(summaries):
    """
    Mean and population std of each metric over repeated runs.

    CF statistics use only runs where CF was defined; they are None when no
    run defined it.
    """
    summaries = list(summaries)
    if not summaries:
        raise ValueError("no runs to aggregate")
    cfs = [s.cf for s in summaries if s.cf is not None]
    maxes = np.array([s.max_acc for s in summaries])
    avgs = np.array([s.avg_acc for s in summaries])
    return {
        'cf_mean': float(np.mean(cfs)) if cfs else None,
        'cf_std': float(np.std(cfs)) if cfs else None,
        'max_acc_mean': float(maxes.mean()),
        'max_acc_std': float(maxes.std()),
        'avg_acc_mean': float(avgs.mean()),
        'avg_acc_std': float(avgs.std()),
        'cf_undefined_runs': len(summaries) - len(cfs),
    }
