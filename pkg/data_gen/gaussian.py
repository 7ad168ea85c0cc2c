"""
Baseline Gaussian fitting, Mahalanobis-radius shifts and importance weights
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import softmax

from .dataset import Dataset

SYMMETRY_TOLERANCE = 1e-10
RIDGE_FACTOR = 1e-6


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Mean and positive-definite covariance with its lower Cholesky factor cached"""
    mean: np.ndarray
    covariance: np.ndarray
    chol: np.ndarray

    @classmethod
    def from_moments(cls, mean, covariance):
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        covariance = np.atleast_2d(np.asarray(covariance, dtype=np.float64))
        d = mean.shape[0]
        if covariance.shape != (d, d):
            raise ValueError(f"covariance shape {covariance.shape} does not match mean length {d}")
        if not np.allclose(covariance, covariance.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
            raise ValueError("covariance is not symmetric")
        try:
            chol = linalg.cholesky(covariance, lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite") from exc
        return cls(mean, covariance, chol)

    @property
    def dim(self):
        return self.mean.shape[0]

    def whiten(self, X, center=None):
        """Return L^-1 (x - center) for each row, as a d x n matrix"""
        center = self.mean if center is None else np.asarray(center, dtype=np.float64)
        diff = np.atleast_2d(np.asarray(X, dtype=np.float64)) - center
        return linalg.solve_triangular(self.chol, diff.T, lower=True)

    def mahalanobis_sq(self, X, center=None):
        z = self.whiten(X, center)
        return np.einsum('ij,ij->j', z, z)

    def precision(self):
        return linalg.cho_solve((self.chol, True), np.eye(self.dim))

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self.chol.T


def fit_gaussian(data):
    """
    Fit the baseline Gaussian of a dataset (or raw feature matrix).

    The covariance is the population covariance plus a ridge of
    1e-6 * trace/d (1e-6 when the trace is zero) so the factorization always
    succeeds.
    """
    X = data.features if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=np.float64))
    n, d = X.shape
    if n == 0 or d == 0:
        raise ValueError("empty input")
    mean = X.mean(axis=0)
    centered = X - mean
    covariance = centered.T @ centered / n
    covariance = (covariance + covariance.T) / 2
    trace = float(np.trace(covariance))
    ridge = RIDGE_FACTOR * trace / d if trace > 0 else RIDGE_FACTOR
    return GaussianParams.from_moments(mean, covariance + ridge * np.eye(d))


def sample_shift_vector(g, radius_C, rng):
    """Draw delta with delta^T Sigma^-1 delta = radius_C, isotropic in the Sigma metric"""
    if radius_C < 0:
        raise ValueError(f"radius_C must be nonnegative, got {radius_C}")
    if radius_C == 0:
        return np.zeros(g.dim)
    while True:
        u = np.asarray(rng.standard_normal(g.dim), dtype=np.float64)
        norm_sq = float(u @ u)
        if norm_sq > 0:
            break
    return np.sqrt(radius_C / norm_sq) * (g.chol @ u)


def importance_weights(data, shifted_mean, g):
    """Normalized exp(-1/2 Mahalanobis^2) weights of each row around `shifted_mean`"""
    X = data.features if isinstance(data, Dataset) else np.atleast_2d(data)
    if X.shape[0] == 0:
        raise ValueError("empty input")
    exponents = -0.5 * g.mahalanobis_sq(X, center=shifted_mean)
    # softmax subtracts the max exponent before exponentiating
    return softmax(exponents)
