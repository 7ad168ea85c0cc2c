"""
One-dimensional Gaussian KDE on a fixed grid and the empirical KL between two
such densities.
"""
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import gaussian_kde

BANDWIDTH_FACTOR = 1.06
DENSITY_FLOOR = 1e-12
GRID_POINTS = 512
GRID_MARGIN = 3.0
MASS_TOLERANCE = 0.02


@dataclass(frozen=True, eq=False)
class Density1D:
    grid: np.ndarray
    pdf: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64).reshape(-1)
        pdf = np.asarray(self.pdf, dtype=np.float64).reshape(-1)
        if grid.shape != pdf.shape:
            raise ValueError(f"grid has {grid.size} points but pdf has {pdf.size}")
        if grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly increasing with at least 2 points")
        if np.any(pdf < 0) or not np.all(np.isfinite(pdf)):
            raise ValueError("pdf must be finite and nonnegative")
        mass = float(trapezoid(pdf, grid))
        if abs(mass - 1.0) > MASS_TOLERANCE:
            raise ValueError(f"pdf integrates to {mass:.4f} over the grid; widen the grid")
        object.__setattr__(self, 'grid', grid)
        object.__setattr__(self, 'pdf', pdf)

    def mass(self):
        return float(trapezoid(self.pdf, self.grid))

    def is_normalized(self, tol=MASS_TOLERANCE):
        return abs(self.mass() - 1.0) <= tol


def _check_samples(samples):
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size < 2:
        raise ValueError(f"need at least 2 samples, got {samples.size}")
    if not np.all(np.isfinite(samples)) or np.ptp(samples) == 0:
        raise ValueError("degenerate samples")
    return samples


def silverman_bandwidth(samples):
    """1.06 * sample std * n^(-1/5)"""
    samples = _check_samples(samples)
    return BANDWIDTH_FACTOR * float(np.std(samples, ddof=1)) * samples.size ** -0.2


def kde_evaluate(samples, x):
    """Silverman-bandwidth Gaussian KDE of `samples` evaluated at arbitrary points `x`"""
    samples = _check_samples(samples)
    # a scalar bw_method scales the sample std, so the kernel width is the Silverman bandwidth
    kde = gaussian_kde(samples, bw_method=BANDWIDTH_FACTOR * samples.size ** -0.2)
    return kde(np.asarray(x, dtype=np.float64))


def kde_pdf(samples, grid):
    """KDE on a grid covering the samples; the grid must hold all but 2% of the mass"""
    return Density1D(grid, kde_evaluate(samples, grid))


def covering_grid(sample_sets, points=GRID_POINTS, margin=GRID_MARGIN):
    """Evenly spaced grid from min - margin*h to max + margin*h, h the widest bandwidth of the sets"""
    sets = [_check_samples(s) for s in sample_sets]
    if not sets:
        raise ValueError("no samples")
    h = max(silverman_bandwidth(s) for s in sets)
    low = min(float(s.min()) for s in sets) - margin * h
    high = max(float(s.max()) for s in sets) + margin * h
    return np.linspace(low, high, points)


def kl_empirical_1d(p, q):
    if p.grid.shape != q.grid.shape or not np.array_equal(p.grid, q.grid):
        raise ValueError("grid mismatch")
    p_pdf = np.maximum(p.pdf, DENSITY_FLOOR)
    q_pdf = np.maximum(q.pdf, DENSITY_FLOOR)
    return float(trapezoid(p_pdf * np.log(p_pdf / q_pdf), p.grid))
