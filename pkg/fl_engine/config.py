from dataclasses import asdict, dataclass

import numpy as np
from django.db import models

from classifiers.nets import DEFAULT_HIDDEN, Kind


class Algo(models.TextChoices):
    FEDAKD = 'fedakd', 'FedAKD'
    FEDAVG = 'fedavg', 'FedAvg'
    STANDALONE = 'standalone', 'Standalone'
    AKD_ALLDATA = 'akd_alldata', 'Ablation: All-Data'
    AKD_SINGLEDIST = 'akd_singledist', 'Ablation: Single-Dist'
    AKD_CORRECTAGG = 'akd_correctagg', 'Ablation: Correct-Agg'


class Weighting(models.TextChoices):
    DATASET_SIZE = 'dataset_size', 'Local dataset size'
    CORRECT_COUNT = 'correct_count', 'Correctly predicted sample count'


class Evaluation(models.TextChoices):
    LOCAL = 'local', "Each client's own test split"
    POOLED = 'pooled', 'Pooled test set'


# Distillation algorithms share the three-step client update
DISTILLING = frozenset({Algo.FEDAKD, Algo.AKD_ALLDATA, Algo.AKD_SINGLEDIST, Algo.AKD_CORRECTAGG})


@dataclass(frozen=True)
class FedConfig:
    """Protocol hyperparameters; defaults are the desk-ics benchmark settings"""
    K: int
    T: int = 20
    eta: float = 0.05
    alpha: float = 1.0
    beta: float = 1.0
    local_epochs: int = 1
    batch: int = 32
    algo: str = Algo.FEDAKD
    agg_weighting: str = Weighting.DATASET_SIZE
    seed: int = 0
    model_kind: str = Kind.LINEAR
    hidden: int = DEFAULT_HIDDEN
    tau: float = 1.0
    evaluation: str = Evaluation.LOCAL
    workers: int = 1

    def __post_init__(self):
        for name, enum in (('algo', Algo), ('agg_weighting', Weighting),
                           ('model_kind', Kind), ('evaluation', Evaluation)):
            try:
                object.__setattr__(self, name, enum(getattr(self, name)))
            except ValueError:
                raise ValueError(
                    f"unknown {name} {getattr(self, name)!r}; choose from {', '.join(enum.values)}"
                ) from None
        if self.K < 1 or self.T < 1:
            raise ValueError(f"K and T must be >= 1, got K={self.K} T={self.T}")
        if self.eta <= 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("distillation coefficients must be nonnegative")
        if self.local_epochs < 1 or self.batch < 1:
            raise ValueError("local_epochs and batch must be >= 1")
        if self.hidden < 1 or self.tau <= 0 or self.workers < 1:
            raise ValueError("hidden, tau and workers must be positive")
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")
        if self.agg_weighting == Weighting.CORRECT_COUNT and self.algo != Algo.AKD_CORRECTAGG:
            raise ValueError("agg_weighting=correct_count is only valid with akd_correctagg")

    @property
    def weighting(self):
        if self.algo == Algo.AKD_CORRECTAGG:
            return Weighting.CORRECT_COUNT
        return self.agg_weighting

    def replace(self, **changes):
        values = {**self.to_dict(), **changes}
        if 'algo' in changes and changes['algo'] != Algo.AKD_CORRECTAGG and 'agg_weighting' not in changes:
            values['agg_weighting'] = Weighting.DATASET_SIZE
        return FedConfig(**values)

    def to_dict(self):
        return {key: (str(value) if isinstance(value, models.TextChoices) else value)
                for key, value in asdict(self).items()}


# Stream keys: (seed, client id, round, step)
STEP_LOCAL = 0
STEP_GLOBAL = 1
INIT_CLIENT = 2**32 - 1


def keyed_rng(seed, client_id, round_index, step):
    """Independent stream per (seed, client, round, step), whatever the execution order"""
    return np.random.default_rng([int(seed), int(client_id), int(round_index), int(step)])
