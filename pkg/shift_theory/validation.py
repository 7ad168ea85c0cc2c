"""
Empirical check of the Gaussian KL approximation: per client, fit a Gaussian
to A samples drawn from a perturbed copy of the baseline and compare the
exact KL to the approximation and to an unperturbed resampling control.
"""
import csv
import logging
from dataclasses import astuple, dataclass
from itertools import groupby
from pathlib import Path

import numpy as np

from data_gen.gaussian import GaussianParams, fit_gaussian, sample_shift_vector

from .kl import PerturbationGaussian, fitting_term, kl_approx_theorem2, kl_gaussian_exact

logger = logging.getLogger(__name__)

MIN_SAMPLES_PER_DIM = 10
MAX_HALVINGS = 10
ROW_HEADER = ['client', 'C', 'A', 'real_kl', 'approx_kl', 'random_kl']
SUMMARY_HEADER = ['C', 'A', 'real_kl', 'approx_kl', 'random_kl', 'fitting_term']


@dataclass(frozen=True)
class ApproximationRow:
    client: int
    C: float
    A: int
    real_kl: float
    approx_kl: float
    random_kl: float


@dataclass(frozen=True)
class ApproximationSummary:
    C: float
    A: int
    real_kl: float
    approx_kl: float
    random_kl: float
    fitting_term: float


def _is_positive_definite(matrix):
    try:
        GaussianParams.from_moments(np.zeros(matrix.shape[0]), matrix)
    except ValueError:
        return False
    return True


def sample_covariance_perturbation(g, rng, scale=0.05):
    """
    Symmetric (G + G^T)/2 with standard-normal G, rescaled to Frobenius norm
    scale * ||Sigma||_F. Halved until Sigma + delta stays positive definite.
    """
    M = g.dim
    if scale == 0:
        return np.zeros((M, M))
    G = rng.standard_normal((M, M))
    sym = (G + G.T) / 2
    norm = np.linalg.norm(sym, 'fro')
    if norm == 0:
        return np.zeros((M, M))
    delta = sym * (scale * np.linalg.norm(g.covariance, 'fro') / norm)
    for halvings in range(MAX_HALVINGS + 1):
        if _is_positive_definite(g.covariance + delta):
            if halvings:
                logger.info("covariance perturbation halved %d time(s) to stay positive definite", halvings)
            return delta
        delta = delta / 2
    raise ValueError(f"covariance perturbation not positive definite after {MAX_HALVINGS} halvings")


def validate_approximation(base, client_Cs, client_As, rng, delta_sigma_scale=0.05):
    """
    One row per client. `base` is a Dataset or a raw feature matrix; each
    client draws from its own child stream of `rng`.
    """
    client_Cs = np.asarray(client_Cs, dtype=np.float64).reshape(-1)
    client_As = np.asarray(client_As).reshape(-1)
    if client_Cs.shape != client_As.shape:
        raise ValueError(f"{client_Cs.size} radii but {client_As.size} sample counts")
    g = fit_gaussian(base)
    minimum = MIN_SAMPLES_PER_DIM * g.dim
    for A in client_As:
        if int(A) != A or A < minimum:
            raise ValueError(f"sample count {A} below {minimum} (10 per dimension)")

    rows = []
    for client, (C, A, stream) in enumerate(zip(client_Cs, client_As, rng.spawn(client_Cs.size))):
        A = int(A)
        delta_mu = sample_shift_vector(g, float(C), stream)
        delta_Sigma = sample_covariance_perturbation(g, stream, delta_sigma_scale)
        pert = PerturbationGaussian(delta_mu, delta_Sigma, g, A)

        shifted_fit = fit_gaussian(pert.shifted.sample(A, stream))
        control_fit = fit_gaussian(g.sample(A, stream))
        rows.append(ApproximationRow(
            client=client,
            C=float(C),
            A=A,
            real_kl=kl_gaussian_exact(shifted_fit, g),
            approx_kl=kl_approx_theorem2(pert),
            random_kl=kl_gaussian_exact(control_fit, g),
        ))
    return rows


def summarize_validation(rows, dim):
    """Average rows sharing (C, A), typically the same client across seeds"""
    key = lambda row: (row.C, row.A)
    summaries = []
    for (C, A), group in groupby(sorted(rows, key=key), key=key):
        group = list(group)
        summaries.append(ApproximationSummary(
            C=C,
            A=A,
            real_kl=float(np.mean([r.real_kl for r in group])),
            approx_kl=float(np.mean([r.approx_kl for r in group])),
            random_kl=float(np.mean([r.random_kl for r in group])),
            fitting_term=fitting_term(dim, A),
        ))
    return summaries


def write_rows(path, header, rows, precision=17):
    fmt = f'.{precision}g'
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open('w', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(v, fmt) if isinstance(v, float) else v for v in astuple(row)])
