import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_HEADER = ['round', 'global_loss', 'client', 'acc_local', 'I_size', 'D_size', 'gamma_local', 'gamma_global']


def _optional(value, fmt):
    return '' if value is None else format(value, fmt)


@dataclass(frozen=True)
class ClientRecord:
    client: int
    acc_local: float
    I_size: int
    D_size: int
    empty_selection: bool = False
    # gradient-norm ratios of the local and global trainings; None when not applicable
    gamma_local: float | None = None
    gamma_global: float | None = None


@dataclass(frozen=True)
class RoundRecord:
    round: int
    global_loss: float
    clients: tuple


@dataclass
class RoundHistory:
    """Per-round global loss on the pooled data and per-client accuracies"""
    algo: str = ''
    rounds: list = field(default_factory=list)

    def append(self, record):
        if self.rounds:
            expected = self.rounds[-1].round + 1
            if record.round != expected:
                raise ValueError(f"expected round {expected}, got {record.round}")
            if len(record.clients) != len(self.rounds[0].clients):
                raise ValueError("client count changed between rounds")
        self.rounds.append(record)

    def __len__(self):
        return len(self.rounds)

    def global_losses(self):
        return np.array([r.global_loss for r in self.rounds])

    def final_accuracies(self):
        """Last-round accuracy per client, ordered by client id"""
        if not self.rounds:
            raise ValueError("history is empty")
        last = sorted(self.rounds[-1].clients, key=lambda c: c.client)
        return np.array([c.acc_local for c in last])

    def empty_selections(self):
        return sum(c.empty_selection for r in self.rounds for c in r.clients)

    def max_inexactness(self, after_round=0):
        """Largest local-training gamma recorded after `after_round`, or None"""
        values = [c.gamma_local for r in self.rounds if r.round > after_round
                  for c in r.clients if c.gamma_local is not None]
        return max(values) if values else None

    def rows(self, precision=17):
        fmt = f'.{precision}g'
        for r in self.rounds:
            for c in r.clients:
                yield [r.round, format(r.global_loss, fmt), c.client, format(c.acc_local, fmt), c.I_size, c.D_size,
                       _optional(c.gamma_local, fmt), _optional(c.gamma_global, fmt)]

    def to_csv(self, path, precision=17):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', newline='') as handle:
            writer = csv.writer(handle, lineterminator='\n')
            writer.writerow(CSV_HEADER)
            writer.writerows(self.rows(precision))
