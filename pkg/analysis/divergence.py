"""
Per-client diagnostics of where distribution shift concentrates.

Features are the representation a classifier feeds to its output layer:
raw inputs for linear models, ReLU activations for mlp1.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from classifiers.nets import hidden, predict
from data_gen.dataset import Dataset
from data_gen.gaussian import fit_gaussian
from shift_theory.kl import kl_gaussian_exact

from .density import GRID_POINTS, covering_grid, kde_pdf, kl_empirical_1d
from .projection import fit_principal_axis

logger = logging.getLogger(__name__)

MIN_SET_SIZE = 2
DIVERGENCE_HEADER = ['client', 'kl_right', 'kl_wrong', 'skipped']
DENSITY_HEADER = ['client', 'set', 'x', 'pdf']
GAUSSIAN_HEADER = ['client', 'kl']


@dataclass(frozen=True)
class ClientDivergence:
    client: int
    kl_right: float | None
    kl_wrong: float | None
    skipped: bool
    right_density: object = None
    wrong_density: object = None


@dataclass(frozen=True)
class RightWrongResult:
    clients: list
    global_right: object
    global_wrong: object

    def usable(self):
        return [c for c in self.clients if not c.skipped]

    def mean_kl(self):
        used = self.usable()
        return (float(np.mean([c.kl_right for c in used])), float(np.mean([c.kl_wrong for c in used])))


def _usable(projections):
    return projections.size >= MIN_SET_SIZE and np.ptp(projections) > 0


def _project_on_own_axis(sets):
    """Project every client's rows of one kind on the principal axis of that kind pooled"""
    axis = fit_principal_axis(np.vstack(sets))
    return [axis.project(s) if s.shape[0] else np.empty(0) for s in sets]


def right_wrong_divergence(clients, grid_points=GRID_POINTS):
    """
    For (Dataset, Classifier) pairs: compare each client's correctly (wrongly)
    predicted rows with the correctly (wrongly) predicted rows pooled over all
    clients, by KDE and empirical KL along one direction.

    Each kind is projected on the principal axis of its own pool, shared by
    every client. Right rows spread mostly along the class structure while
    wrong rows sit near the decision boundary, so a single axis fit on all
    rows would only see how class proportions differ between clients.
    """
    features, correct = [], []
    for data, model in clients:
        features.append(hidden(model, data.features))
        correct.append(predict(model, data.features) == data.labels)
    if len({f.shape[1] for f in features}) > 1:
        raise ValueError("clients expose features of different widths")

    rights = [f[mask] for f, mask in zip(features, correct)]
    wrongs = [f[~mask] for f, mask in zip(features, correct)]
    candidates = [k for k in range(len(clients))
                  if rights[k].shape[0] >= MIN_SET_SIZE and wrongs[k].shape[0] >= MIN_SET_SIZE]
    if len(candidates) < 2:
        raise ValueError(f"only {len(candidates)} client(s) have at least {MIN_SET_SIZE} right and wrong samples")

    right_proj = _project_on_own_axis(rights)
    wrong_proj = _project_on_own_axis(wrongs)
    usable = [k for k in candidates if _usable(right_proj[k]) and _usable(wrong_proj[k])]
    for k in sorted(set(range(len(clients))) - set(usable)):
        logger.info("client %d skipped: %d right, %d wrong samples", k, rights[k].shape[0], wrongs[k].shape[0])
    if len(usable) < 2:
        raise ValueError(f"only {len(usable)} client(s) have at least {MIN_SET_SIZE} right and wrong samples")

    pooled_right = np.concatenate(right_proj)
    pooled_wrong = np.concatenate(wrong_proj)
    right_grid = covering_grid([pooled_right] + [right_proj[k] for k in usable], points=grid_points)
    wrong_grid = covering_grid([pooled_wrong] + [wrong_proj[k] for k in usable], points=grid_points)
    global_right = kde_pdf(pooled_right, right_grid)
    global_wrong = kde_pdf(pooled_wrong, wrong_grid)

    records = []
    for k in range(len(clients)):
        if k not in usable:
            records.append(ClientDivergence(k, None, None, True))
            continue
        try:
            right = kde_pdf(right_proj[k], right_grid)
            wrong = kde_pdf(wrong_proj[k], wrong_grid)
        except ValueError as exc:
            logger.info("client %d skipped: %s", k, exc)
            records.append(ClientDivergence(k, None, None, True))
            continue
        records.append(ClientDivergence(
            k, kl_empirical_1d(right, global_right), kl_empirical_1d(wrong, global_wrong), False, right, wrong,
        ))
    result = RightWrongResult(records, global_right, global_wrong)
    if len(result.usable()) < 2:
        raise ValueError(f"only {len(result.usable())} client(s) have densities on the shared grid")
    return result


def client_gaussian_divergence(datasets):
    """KL between a Gaussian fit of each client's features and the fit of all clients pooled"""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("no clients")
    pooled = fit_gaussian(Dataset.concat(datasets))
    return [kl_gaussian_exact(fit_gaussian(data), pooled) for data in datasets]


def _format(value, fmt):
    return '' if value is None else format(value, fmt)


def _writer(path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open('w', newline='')


def write_divergences(path, result, precision=17):
    fmt = f'.{precision}g'
    with _writer(path) as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(DIVERGENCE_HEADER)
        for c in result.clients:
            writer.writerow([c.client, _format(c.kl_right, fmt), _format(c.kl_wrong, fmt), int(c.skipped)])


def write_densities(path, result, precision=17):
    """Long-format `client,set,x,pdf`; the pooled densities use client `all`"""
    fmt = f'.{precision}g'
    series = [('all', 'right', result.global_right), ('all', 'wrong', result.global_wrong)]
    for c in result.usable():
        series += [(c.client, 'right', c.right_density), (c.client, 'wrong', c.wrong_density)]
    with _writer(path) as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(DENSITY_HEADER)
        for client, name, density in series:
            for x, pdf in zip(density.grid, density.pdf):
                writer.writerow([client, name, format(x, fmt), format(pdf, fmt)])


def write_gaussian_divergences(path, values, precision=17):
    fmt = f'.{precision}g'
    with _writer(path) as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(GAUSSIAN_HEADER)
        writer.writerows([k, format(v, fmt)] for k, v in enumerate(values))
