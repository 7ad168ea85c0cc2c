"""
KL divergence between Gaussians and its second-order approximations under
small perturbations of the generating parameters.

All divergences are in nats. The fitting term R/(2A) is the expected KL
inflation of estimating R free parameters from A samples; for an
M-dimensional Gaussian R = M(M+3)/2.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from data_gen.gaussian import SYMMETRY_TOLERANCE, GaussianParams


def _symmetric(matrix, name):
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"{name} must be square, got {matrix.shape}")
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=SYMMETRY_TOLERANCE):
        raise ValueError(f"{name} is not symmetric")
    return matrix


def gaussian_free_params(M):
    return M * (M + 3) // 2


def fitting_term(M, A):
    return M * (M + 3) / (4.0 * A)


@dataclass(frozen=True, eq=False)
class PerturbationGaussian:
    """Mean and covariance perturbation of a base Gaussian, observed through A samples"""
    delta_mu: np.ndarray
    delta_Sigma: np.ndarray
    base: GaussianParams
    sample_count_A: int

    def __post_init__(self):
        M = self.base.dim
        delta_mu = np.asarray(self.delta_mu, dtype=np.float64).reshape(-1)
        delta_Sigma = _symmetric(self.delta_Sigma, 'delta_Sigma')
        if delta_mu.shape != (M,) or delta_Sigma.shape != (M, M):
            raise ValueError(f"perturbation shapes {delta_mu.shape}, {delta_Sigma.shape} do not match M={M}")
        if self.sample_count_A < 1:
            raise ValueError(f"sample count must be positive, got {self.sample_count_A}")
        # raises when base + delta_Sigma is not positive definite
        GaussianParams.from_moments(self.base.mean + delta_mu, self.base.covariance + delta_Sigma)
        object.__setattr__(self, 'delta_mu', delta_mu)
        object.__setattr__(self, 'delta_Sigma', delta_Sigma)

    @property
    def M(self):
        return self.base.dim

    @property
    def shifted(self):
        return GaussianParams.from_moments(self.base.mean + self.delta_mu,
                                           self.base.covariance + self.delta_Sigma)


@dataclass(frozen=True, eq=False)
class GeneralPerturbation:
    """Parameter perturbation delta with the Fisher information and its directional derivative"""
    delta: np.ndarray
    fisher: np.ndarray
    fisher_grad_applied: np.ndarray
    free_params_R: int
    sample_count_A: int

    def __post_init__(self):
        delta = np.asarray(self.delta, dtype=np.float64).reshape(-1)
        fisher = _symmetric(self.fisher, 'fisher')
        grad = np.atleast_2d(np.asarray(self.fisher_grad_applied, dtype=np.float64))
        N = delta.shape[0]
        if fisher.shape != (N, N) or grad.shape != (N, N):
            raise ValueError(f"fisher {fisher.shape} and derivative {grad.shape} must be {N}x{N}")
        if self.free_params_R < 1 or self.sample_count_A < 1:
            raise ValueError("R and A must be positive")
        object.__setattr__(self, 'delta', delta)
        object.__setattr__(self, 'fisher', fisher)
        object.__setattr__(self, 'fisher_grad_applied', grad)


def kl_gaussian_exact(p, q):
    """Closed-form KL(N_p || N_q)"""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    factor = (q.chol, True)
    diff = q.mean - p.mean
    trace_term = float(np.trace(linalg.cho_solve(factor, p.covariance)))
    mahalanobis = float(diff @ linalg.cho_solve(factor, diff))
    value = 0.5 * (trace_term + mahalanobis - p.dim + q.logdet() - p.logdet())
    return max(value, 0.0)


def kl_approx_theorem2(pert):
    """
    Second-order KL between the perturbed and base Gaussian plus the fitting term:

        1/4 ||P dS P||_F^2 - 1/2 tr((dS P)^3) + 1/2 dmu^T P (I - dS P) dmu + M(M+3)/(4A)

    with P = Sigma^-1 of the base.
    """
    P = pert.base.precision()
    dS, dmu, M = pert.delta_Sigma, pert.delta_mu, pert.M
    sandwich = P @ dS @ P
    dSP = dS @ P
    covariance_term = 0.25 * float(np.sum(sandwich ** 2))
    cubic_term = -0.5 * float(np.trace(dSP @ dSP @ dSP))
    mean_term = 0.5 * float(dmu @ (P @ (np.eye(M) - dSP)) @ dmu)
    return covariance_term + cubic_term + mean_term + fitting_term(M, pert.sample_count_A)


def kl_approx_theorem1(pert):
    """1/2 d^T I d + 1/2 d^T (grad I . d) d + R/(2A)"""
    d = pert.delta
    return (0.5 * float(d @ pert.fisher @ d)
            + 0.5 * float(d @ pert.fisher_grad_applied @ d)
            + pert.free_params_R / (2.0 * pert.sample_count_A))


def gaussian_fisher(base):
    """Block-diagonal Fisher information over (mu, vec Sigma): diag(P, 1/2 P kron P)"""
    P = base.precision()
    return linalg.block_diag(P, 0.5 * np.kron(P, P))


def gaussian_fisher_derivative(base, delta_Sigma):
    """Directional derivative of `gaussian_fisher` along a covariance perturbation"""
    P = base.precision()
    dP = -P @ delta_Sigma @ P
    return linalg.block_diag(dP, 0.5 * (np.kron(dP, P) + np.kron(P, dP)))


def as_general_perturbation(pert):
    """
    Express a Gaussian perturbation in the generic form, with delta = (dmu, vec dSigma).

    `kl_approx_theorem1` on the result equals `kl_approx_theorem2` on `pert`
    exactly when the base covariance is the identity or delta_Sigma is zero.
    """
    delta = np.concatenate([pert.delta_mu, pert.delta_Sigma.ravel(order='F')])
    fisher = gaussian_fisher(pert.base)
    fisher = (fisher + fisher.T) / 2
    return GeneralPerturbation(
        delta=delta,
        fisher=fisher,
        fisher_grad_applied=gaussian_fisher_derivative(pert.base, pert.delta_Sigma),
        free_params_R=gaussian_free_params(pert.M),
        sample_count_A=pert.sample_count_A,
    )
