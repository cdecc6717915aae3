"""
RKHS Norm Checks
Norms of finite kernel expansions, the lengthscale-scaling inequality for
stationary kernels and the hyperparameter superset box around a data-based
selection.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.spatial.distance import cdist

from .errors import DomainError, KernelError
from .kernels import HyperparameterDomain, KernelSpec, as_rows, cross_kernel, gram_matrix

logger = logging.getLogger(__name__)

SCALING_JITTER = 1e-10
SCALING_RTOL = 1e-8
PSD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class KernelExpansion:
    """Finite RKHS element f = sum_i alpha_i k(., x_i)"""
    spec: KernelSpec
    centers: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        centers = as_rows(self.centers, self.spec.input_dim)
        coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if coeffs.size != centers.shape[0]:
            raise KernelError(f"{centers.shape[0]} centers but {coeffs.size} coefficients")
        if not np.all(np.isfinite(coeffs)):
            raise KernelError("Expansion coefficients must be finite")
        if centers.shape[0] > 1 and np.any(cdist(centers, centers)[np.triu_indices(centers.shape[0], 1)] == 0.0):
            raise KernelError("Expansion centers must be distinct")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "coeffs", coeffs)

    def __call__(self, points) -> np.ndarray:
        return cross_kernel(self.spec, points, self.centers) @ self.coeffs


@dataclass(frozen=True)
class ScalingCheck:
    lhs: float
    rhs: float
    holds: bool


def rkhs_norm(expansion: KernelExpansion) -> float:
    """sqrt(alpha^T K alpha) for the Gram matrix of the expansion centers"""
    K = gram_matrix(expansion.spec, expansion.centers)
    eigenvalues = np.linalg.eigvalsh(K)
    if eigenvalues[0] < -PSD_TOL * max(float(np.trace(K)), 1.0):
        raise KernelError(f"Gram matrix is indefinite (min eigenvalue {eigenvalues[0]:.3e})")
    value = float(expansion.coeffs @ K @ expansion.coeffs)
    return float(np.sqrt(max(value, 0.0)))


def stationary_gram(points: np.ndarray, sigma_diag: Sequence[float]) -> np.ndarray:
    """k((x - x')^T Sigma^-1 (x - x')) = exp(-(x - x')^T Sigma^-1 (x - x')) with Sigma = diag(sigma_diag)"""
    scale = np.sqrt(np.asarray(sigma_diag, dtype=float))
    return np.exp(-cdist(points / scale, points / scale, "sqeuclidean"))


def _interpolant_norm_sq(K: np.ndarray, values: np.ndarray) -> float:
    L = cholesky(K + SCALING_JITTER * np.eye(K.shape[0]), lower=True)
    return float(values @ cho_solve((L, True), values))


def scaling_bound_check(values_on_grid: Sequence[float], grid, phi: Sequence[float],
                        phi_prime: Sequence[float]) -> ScalingCheck:
    """
    Compare minimal-norm interpolant norms under shrunken scales

    Args:
        values_on_grid: Function values f at the grid points
        grid: Grid points, one per row
        phi: Scales Sigma = diag(phi) of the original kernel
        phi_prime: Scales with 0 < phi_prime <= phi elementwise

    Returns:
        ScalingCheck with lhs = f^T K_phi'^-1 f, rhs = prod(phi / phi') f^T K_phi^-1 f
        and holds = lhs <= rhs (1 + 1e-8)
    """
    phi = np.asarray(phi, dtype=float).reshape(-1)
    phi_prime = np.asarray(phi_prime, dtype=float).reshape(-1)
    if phi.size != phi_prime.size:
        raise DomainError(f"phi has {phi.size} entries, phi_prime has {phi_prime.size}")
    if np.any(phi_prime <= 0.0) or np.any(phi_prime > phi):
        raise DomainError(f"Need 0 < phi_prime <= phi elementwise, got {phi_prime} vs {phi}")
    points = as_rows(grid, phi.size)
    f = np.asarray(values_on_grid, dtype=float).reshape(-1)
    if f.size != points.shape[0]:
        raise DomainError(f"{f.size} values for {points.shape[0]} grid points")

    lhs = _interpolant_norm_sq(stationary_gram(points, phi_prime), f)
    rhs = float(np.prod(phi / phi_prime)) * _interpolant_norm_sq(stationary_gram(points, phi), f)
    return ScalingCheck(lhs=lhs, rhs=rhs, holds=bool(lhs <= rhs * (1.0 + SCALING_RTOL)))


def random_scaling_draws(n_draws: int, seed: int = 0, dims: Sequence[int] = (1, 2),
                         max_points: int = 8) -> List[ScalingCheck]:
    """
    Run the scaling check on seeded random (grid, f, phi, phi') draws

    Grid points are kept at least one unit apart and scales below a few units so
    both Gram matrices stay well conditioned.
    """
    rng = np.random.default_rng(seed)
    results = []
    for draw in range(n_draws):
        d = int(dims[draw % len(dims)])
        n = int(rng.integers(2, max_points + 1))
        points = _spread_points(rng, n, d)
        phi = rng.uniform(0.2, 2.0, size=d)
        phi_prime = phi * rng.uniform(0.1, 1.0, size=d)
        f = rng.normal(size=n)
        results.append(scaling_bound_check(f, points, phi, phi_prime))
    failed = sum(not r.holds for r in results)
    if failed:
        logger.error(f"❌ {failed}/{n_draws} scaling draws violated the bound")
    else:
        logger.info(f"✅ {n_draws} scaling draws satisfied the bound")
    return results


def _spread_points(rng: np.random.Generator, n: int, d: int, min_gap: float = 1.0) -> np.ndarray:
    points: List[np.ndarray] = []
    side = 2.0 * n
    while len(points) < n:
        candidate = rng.uniform(0.0, side, size=d)
        if all(np.linalg.norm(candidate - p) >= min_gap for p in points):
            points.append(candidate)
    return np.array(points)


def build_superset(phi_star: Sequence[float], shrink: float = 0.5, grow: float = 2.0,
                   log_scale: Optional[bool] = True) -> HyperparameterDomain:
    """Box [shrink * phi*, grow * phi*] containing phi* strictly inside"""
    phi_star = np.asarray(phi_star, dtype=float).reshape(-1)
    if np.any(phi_star <= 0.0) or not np.all(np.isfinite(phi_star)):
        raise DomainError(f"phi* must be positive and finite, got {phi_star}")
    if not (0.0 < shrink < 1.0):
        raise DomainError(f"shrink factor must lie in (0, 1), got {shrink}")
    if not grow > 1.0:
        raise DomainError(f"grow factor must exceed 1, got {grow}")
    return HyperparameterDomain(
        tuple(shrink * phi_star), tuple(grow * phi_star), (bool(log_scale),) * phi_star.size
    )
