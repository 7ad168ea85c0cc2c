import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

DIRECTION_TOLERANCE = 1e-9
MAX_ITERATIONS = 1000
START_SEED = 0


@dataclass(frozen=True, eq=False)
class PrincipalAxis:
    """Top eigenvector of the population covariance of the data it was fit on"""
    mean: np.ndarray
    direction: np.ndarray
    eigenvalue: float
    iterations: int
    converged: bool

    def project(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.mean.shape[0]:
            raise ValueError(f"expected {self.mean.shape[0]} columns, got {X.shape[1]}")
        return (X - self.mean) @ self.direction


def _orient(v):
    # largest-magnitude component positive
    return v if v[np.argmax(np.abs(v))] > 0 else -v


def fit_principal_axis(X, tol=DIRECTION_TOLERANCE, max_iter=MAX_ITERATIONS):
    """
    Power iteration on the population covariance from a fixed-seed start,
    stopping once the unit direction moves less than `tol`.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / n
    if np.trace(cov) <= 0:
        raise ValueError("zero variance")

    v = np.random.default_rng(START_SEED).normal(size=d)
    if np.linalg.norm(cov @ v) == 0:
        v = np.eye(d)[np.argmax(np.diag(cov))]
    v = _orient(v / np.linalg.norm(v))

    converged = False
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        w = cov @ v
        w = _orient(w / np.linalg.norm(w))
        change = np.linalg.norm(w - v)
        v = w
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning("power iteration stopped after %d iterations without converging", max_iter)
    return PrincipalAxis(mean, v, float(v @ cov @ v), iterations, converged)


def pca_project_1d(X):
    return fit_principal_axis(X).project(X)
