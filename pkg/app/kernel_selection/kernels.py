"""
Kernel Catalog
Kernel candidates, hyperparameter boxes and Gram-matrix construction shared by
the regression models, the BO surrogate and the RKHS checks.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DomainError, KernelError

logger = logging.getLogger(__name__)


class KernelFamily(Enum):
    """Kernel candidates a model can be built from"""
    LINEAR = "Linear"                                  # x^T x'
    POLYNOMIAL_CUBIC = "PolynomialCubic"               # (1 + x^T x')^3
    GAUSSIAN = "Gaussian"                              # exp(-|x - x'|^2 / phi1^2)
    SQUARED_EXPONENTIAL_ARD = "SquaredExponentialARD"  # amp^2 exp(-sum (x_i - x'_i)^2 / l_i^2)

    def arity(self, input_dim: int) -> int:
        """Number of hyperparameters the family carries for the given input dimension"""
        if self in (KernelFamily.LINEAR, KernelFamily.POLYNOMIAL_CUBIC):
            return 0
        if self is KernelFamily.GAUSSIAN:
            return 1
        return 1 + int(input_dim)

    @property
    def stationary(self) -> bool:
        return self in (KernelFamily.GAUSSIAN, KernelFamily.SQUARED_EXPONENTIAL_ARD)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus its hyperparameter vector phi"""
    family: KernelFamily
    phi: Tuple[float, ...] = ()
    input_dim: int = 1

    def __post_init__(self):
        family = self.family if isinstance(self.family, KernelFamily) else KernelFamily(self.family)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "phi", tuple(float(v) for v in np.ravel(self.phi)))
        if int(self.input_dim) < 1:
            raise KernelError(f"input_dim must be positive, got {self.input_dim}")
        expected = family.arity(self.input_dim)
        if len(self.phi) != expected:
            raise KernelError(
                f"{family.value} kernel with input_dim={self.input_dim} takes {expected} "
                f"hyperparameters, got {len(self.phi)}"
            )
        if not all(np.isfinite(self.phi)):
            raise KernelError(f"Non-finite hyperparameters for {family.value}: {self.phi}")
        if any(v <= 0.0 for v in self.phi):
            raise KernelError(f"Kernel scales must be strictly positive, got {self.phi}")

    def with_phi(self, phi: Sequence[float]) -> "KernelSpec":
        return KernelSpec(self.family, tuple(phi), self.input_dim)

    def to_dict(self) -> Dict[str, Any]:
        return {"family": self.family.value, "phi": list(self.phi)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any], input_dim: Optional[int] = None) -> "KernelSpec":
        family = KernelFamily(data["family"])
        phi = tuple(data.get("phi", ()))
        if input_dim is None:
            # ARD arity encodes the dimension; the other families default to scalar inputs
            input_dim = len(phi) - 1 if family is KernelFamily.SQUARED_EXPONENTIAL_ARD else 1
        return cls(family, phi, input_dim)


@dataclass(frozen=True)
class HyperparameterDomain:
    """Axis-aligned search box for hyperparameters, optionally log-scaled per axis"""
    lower: Tuple[float, ...] = ()
    upper: Tuple[float, ...] = ()
    log_scale: Tuple[bool, ...] = field(default=())

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        log_scale = tuple(bool(v) for v in self.log_scale) if len(self.log_scale) else (False,) * len(lower)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "log_scale", log_scale)
        if not (len(lower) == len(upper) == len(log_scale)):
            raise DomainError(
                f"Domain vectors differ in length: {len(lower)}, {len(upper)}, {len(log_scale)}"
            )
        for lo, hi, log in zip(lower, upper, log_scale):
            if not (np.isfinite(lo) and np.isfinite(hi)):
                raise DomainError(f"Domain bounds must be finite, got [{lo}, {hi}]")
            if lo > hi:
                raise DomainError(f"Lower bound {lo} exceeds upper bound {hi}")
            if log and lo <= 0.0:
                raise DomainError(f"Log-scaled axis needs a positive lower bound, got {lo}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @classmethod
    def empty(cls) -> "HyperparameterDomain":
        return cls((), (), ())

    def concat(self, other: Optional["HyperparameterDomain"]) -> "HyperparameterDomain":
        if other is None or other.dim == 0:
            return self
        return HyperparameterDomain(
            self.lower + other.lower, self.upper + other.upper, self.log_scale + other.log_scale
        )

    def _warped(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        log = np.asarray(self.log_scale, dtype=bool)
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        lo = np.where(log, np.log(np.where(log, lo, 1.0)), lo)
        hi = np.where(log, np.log(np.where(log, hi, 1.0)), hi)
        return lo, hi, log

    def to_unit(self, phi: Sequence[float]) -> np.ndarray:
        """Map a point of the box to [0, 1]^dim (log axes mapped in log space)"""
        phi = np.asarray(phi, dtype=float).reshape(-1)
        if phi.size != self.dim:
            raise DomainError(f"Point has {phi.size} entries, domain has {self.dim}")
        lo, hi, log = self._warped()
        warped = np.where(log, np.log(np.where(log, np.maximum(phi, 1e-300), 1.0)), phi)
        span = hi - lo
        safe = np.where(span > 0.0, span, 1.0)
        return np.where(span > 0.0, (warped - lo) / safe, 0.5)

    def from_unit(self, unit: Sequence[float]) -> np.ndarray:
        unit = np.clip(np.asarray(unit, dtype=float).reshape(-1), 0.0, 1.0)
        if unit.size != self.dim:
            raise DomainError(f"Unit point has {unit.size} entries, domain has {self.dim}")
        lo, hi, log = self._warped()
        warped = lo + unit * (hi - lo)
        phi = np.where(log, np.exp(warped), warped)
        # exp/log round trips can step a hair outside the box
        return np.clip(phi, self.lower, self.upper) if self.dim else phi

    def midpoint(self) -> np.ndarray:
        return self.from_unit(np.full(self.dim, 0.5))

    def contains(self, phi: Sequence[float], rtol: float = 1e-9) -> bool:
        phi = np.asarray(phi, dtype=float).reshape(-1)
        if phi.size != self.dim:
            return False
        if self.dim == 0:
            return True
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        slack = rtol * np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
        return bool(np.all(np.isfinite(phi)) and np.all(phi >= lo - slack) and np.all(phi <= hi + slack))

    def clip(self, phi: Sequence[float]) -> np.ndarray:
        phi = np.asarray(phi, dtype=float).reshape(-1)
        return np.clip(phi, self.lower, self.upper) if self.dim else phi

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        """Uniform draws in the warped box, shape (n, dim)"""
        units = rng.uniform(size=(n, self.dim))
        return np.array([self.from_unit(u) for u in units]).reshape(n, self.dim)

    def to_dict(self) -> Dict[str, Any]:
        return {"lower": list(self.lower), "upper": list(self.upper), "log_scale": list(self.log_scale)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HyperparameterDomain":
        return cls(tuple(data["lower"]), tuple(data["upper"]), tuple(data.get("log_scale", ())))


# Multiplicative span of 10^4 around 1, log-scaled
DEFAULT_SCALE_BOUNDS = (1e-2, 1e2)
SVR_EPSILON_BOUNDS = (1e-3, 1e1)
GP_NOISE_BOUNDS = (1e-4, 1e1)


def default_domain(family: KernelFamily, input_dim: int = 1) -> HyperparameterDomain:
    """
    Search box used when the configuration gives none

    Args:
        family: Kernel family
        input_dim: Dimension of the model inputs

    Returns:
        Log-scaled box with one axis per hyperparameter of the family
    """
    family = family if isinstance(family, KernelFamily) else KernelFamily(family)
    n = family.arity(input_dim)
    lo, hi = DEFAULT_SCALE_BOUNDS
    return HyperparameterDomain((lo,) * n, (hi,) * n, (True,) * n)


def svr_epsilon_domain() -> HyperparameterDomain:
    lo, hi = SVR_EPSILON_BOUNDS
    return HyperparameterDomain((lo,), (hi,), (True,))


def gp_noise_domain() -> HyperparameterDomain:
    lo, hi = GP_NOISE_BOUNDS
    return HyperparameterDomain((lo,), (hi,), (True,))


def as_rows(points: Any, input_dim: int) -> np.ndarray:
    """Coerce points into an (m, input_dim) float matrix"""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if input_dim == 1 else arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != input_dim:
        raise KernelError(f"Expected points of dimension {input_dim}, got array of shape {np.shape(points)}")
    return arr


def cross_kernel(spec: KernelSpec, A: Any, B: Any) -> np.ndarray:
    """Kernel matrix K[i, j] = k(A_i, B_j)"""
    A = as_rows(A, spec.input_dim)
    B = as_rows(B, spec.input_dim)
    family = spec.family
    if family is KernelFamily.LINEAR:
        return A @ B.T
    if family is KernelFamily.POLYNOMIAL_CUBIC:
        return (1.0 + A @ B.T) ** 3
    if family is KernelFamily.GAUSSIAN:
        return np.exp(-cdist(A, B, "sqeuclidean") / spec.phi[0] ** 2)
    amplitude = spec.phi[0]
    lengthscales = np.asarray(spec.phi[1:])
    return amplitude ** 2 * np.exp(-cdist(A / lengthscales, B / lengthscales, "sqeuclidean"))


def eval_kernel(spec: KernelSpec, x: Sequence[float], x2: Sequence[float]) -> float:
    """Evaluate k(x, x') for two single points"""
    x = np.asarray(x, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    if x.size != spec.input_dim or x2.size != spec.input_dim:
        raise KernelError(
            f"Kernel expects {spec.input_dim}-dimensional points, got {x.size} and {x2.size}"
        )
    return float(cross_kernel(spec, x[None, :], x2[None, :])[0, 0])


def gram_matrix(spec: KernelSpec, A: Any) -> np.ndarray:
    """
    Symmetric Gram matrix of a point set

    Args:
        spec: Kernel specification
        A: Points, one per row (m >= 1)

    Returns:
        m x m matrix with K[i, j] = k(a_i, a_j)
    """
    A = as_rows(A, spec.input_dim)
    if A.shape[0] < 1:
        raise KernelError("Gram matrix needs at least one point")
    K = cross_kernel(spec, A, A)
    K = 0.5 * (K + K.T)
    if not np.all(np.isfinite(K)):
        raise KernelError(f"Non-finite Gram matrix for {spec.family.value} with phi={spec.phi}")
    return K


def kernel_diag(spec: KernelSpec, A: Any) -> np.ndarray:
    """Diagonal k(a_i, a_i) without forming the full matrix"""
    A = as_rows(A, spec.input_dim)
    if spec.family is KernelFamily.LINEAR:
        return np.sum(A * A, axis=1)
    if spec.family is KernelFamily.POLYNOMIAL_CUBIC:
        return (1.0 + np.sum(A * A, axis=1)) ** 3
    level = 1.0 if spec.family is KernelFamily.GAUSSIAN else spec.phi[0] ** 2
    return np.full(A.shape[0], level)
