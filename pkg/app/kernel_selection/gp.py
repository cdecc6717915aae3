"""
Gaussian Process Regression
Exact GP posterior, negative log marginal likelihood and likelihood-based
hyperparameter fitting. Used as a dynamics model and as the BO surrogate.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .errors import FactorizationError, KernelError
from .kernels import (
    HyperparameterDomain,
    KernelFamily,
    KernelSpec,
    as_rows,
    cross_kernel,
    default_domain,
    gp_noise_domain,
    gram_matrix,
    kernel_diag,
)

logger = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
# Objective value reported for hyperparameters whose Gram matrix cannot be factorized
FAILED_NLL = 1e25


@dataclass(frozen=True, eq=False)
class Dataset:
    """Training pairs (a_i, b_i) for a kernel-based model"""
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1)
        targets = np.array(self.targets, dtype=float).reshape(-1)
        if inputs.ndim != 2:
            raise ValueError(f"Dataset inputs must be a matrix, got shape {inputs.shape}")
        if inputs.shape[0] < 1:
            raise ValueError("Dataset needs at least one training pair")
        if inputs.shape[0] != targets.size:
            raise ValueError(f"{inputs.shape[0]} inputs but {targets.size} targets")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise ValueError("Dataset entries must be finite")
        inputs.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def m(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.inputs[idx], self.targets[idx])

    def append(self, other: "Dataset") -> "Dataset":
        if other.input_dim != self.input_dim:
            raise ValueError(f"Cannot merge datasets of dimension {self.input_dim} and {other.input_dim}")
        return Dataset(np.vstack([self.inputs, other.inputs]), np.concatenate([self.targets, other.targets]))

    def to_dict(self) -> Dict[str, Any]:
        return {"inputs": self.inputs.tolist(), "targets": self.targets.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Dataset":
        return cls(np.asarray(data["inputs"], dtype=float), np.asarray(data["targets"], dtype=float))


@dataclass(frozen=True, eq=False)
class GpModel:
    """Fitted GP with cached Cholesky factor of K + sigma_n^2 I"""
    spec: KernelSpec
    noise_sigma: float
    train: Dataset
    factor: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kernel": self.spec.to_dict(),
            "noise_sigma": self.noise_sigma,
            "jitter": self.jitter,
            "train": self.train.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GpModel":
        train = Dataset.from_dict(data["train"])
        spec = KernelSpec.from_dict(data["kernel"], input_dim=train.input_dim)
        return fit(train, spec, data["noise_sigma"])


@dataclass(frozen=True)
class Prediction:
    """Posterior mean and variance at one test point"""
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


class HyperparameterFit(NamedTuple):
    spec: KernelSpec
    noise_sigma: float
    nll_value: float


def _factorize(K: np.ndarray) -> Tuple[np.ndarray, float]:
    """Cholesky factor of K, escalating a diagonal jitter x10 per attempt when needed"""
    try:
        return cholesky(K, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    m = K.shape[0]
    scale = float(np.trace(K)) / m
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    jitter = JITTER_START * scale
    eye = np.eye(m)
    while jitter <= JITTER_MAX * scale * (1.0 + 1e-9):
        try:
            L = cholesky(K + jitter * eye, lower=True)
            logger.debug(f"⚠️ Cholesky needed jitter {jitter:.3e} (m={m})")
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationError(
        f"Cholesky factorization failed for m={m} up to jitter {JITTER_MAX * scale:.3e}",
        max_jitter=JITTER_MAX * scale,
    )


def _check_inputs(data: Dataset, spec: KernelSpec, noise_sigma: float):
    if noise_sigma < 0.0 or not np.isfinite(noise_sigma):
        raise ValueError(f"noise_sigma must be a nonnegative finite number, got {noise_sigma}")
    if spec.input_dim != data.input_dim:
        raise KernelError(f"Kernel input_dim {spec.input_dim} does not match data dimension {data.input_dim}")


def fit(data: Dataset, spec: KernelSpec, noise_sigma: float) -> GpModel:
    """
    Condition a zero-mean GP on the training data

    Args:
        data: Training pairs
        spec: Kernel of the GP prior
        noise_sigma: Observation noise standard deviation sigma_n

    Returns:
        GpModel holding the factor of K + sigma_n^2 I and (K + sigma_n^2 I)^-1 B
    """
    noise_sigma = float(noise_sigma)
    _check_inputs(data, spec, noise_sigma)
    K = gram_matrix(spec, data.inputs) + noise_sigma ** 2 * np.eye(data.m)
    L, jitter = _factorize(K)
    alpha = cho_solve((L, True), data.targets)
    return GpModel(spec=spec, noise_sigma=noise_sigma, train=data, factor=L, alpha=alpha, jitter=jitter)


def predict_many(model: GpModel, points: Any) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior means and variances for a batch of test points (one per row)"""
    A = as_rows(points, model.spec.input_dim)
    k_star = cross_kernel(model.spec, model.train.inputs, A)
    mean = k_star.T @ model.alpha
    v = solve_triangular(model.factor, k_star, lower=True)
    k_ss = kernel_diag(model.spec, A)
    variance = np.maximum(k_ss - np.sum(v * v, axis=0), 0.0)
    return mean, variance


def predict(model: GpModel, a_star: Sequence[float]) -> Prediction:
    """Posterior mean k*^T (K + sigma_n^2 I)^-1 B and variance k** - k*^T (K + sigma_n^2 I)^-1 k*"""
    a_star = np.asarray(a_star, dtype=float).reshape(-1)
    if a_star.size != model.spec.input_dim:
        raise KernelError(f"Test point has dimension {a_star.size}, model expects {model.spec.input_dim}")
    mean, variance = predict_many(model, a_star[None, :])
    return Prediction(mean=float(mean[0]), variance=float(variance[0]))


def nll(data: Dataset, spec: KernelSpec, noise_sigma: float) -> float:
    """Negative log marginal likelihood 1/2 (B^T K**^-1 B + log|K**| + m log 2 pi)"""
    model = fit(data, spec, noise_sigma)
    data_fit = float(data.targets @ model.alpha)
    log_det = 2.0 * float(np.sum(np.log(np.diag(model.factor))))
    return 0.5 * (data_fit + log_det + data.m * math.log(2.0 * math.pi))


def nll_log_gradient(data: Dataset, spec: KernelSpec, noise_sigma: float, step: float = 1e-5) -> np.ndarray:
    """
    Centered-difference gradient of the nll with respect to log hyperparameters

    The last entry is the derivative with respect to log sigma_n; it is omitted
    when sigma_n is zero.
    """
    theta = list(np.log(spec.phi))
    with_noise = noise_sigma > 0.0
    if with_noise:
        theta.append(math.log(noise_sigma))
    theta = np.asarray(theta, dtype=float)

    def value(log_theta: np.ndarray) -> float:
        params = np.exp(log_theta)
        n_kernel = len(spec.phi)
        noise = params[n_kernel] if with_noise else 0.0
        return nll(data, spec.with_phi(params[:n_kernel]), noise)

    grad = np.zeros_like(theta)
    for i in range(theta.size):
        shift = np.zeros_like(theta)
        shift[i] = step
        grad[i] = (value(theta + shift) - value(theta - shift)) / (2.0 * step)
    return grad


def optimize_hyperparameters(data: Dataset,
                             family: KernelFamily,
                             domain: Optional[HyperparameterDomain] = None,
                             noise_domain: Optional[HyperparameterDomain] = None,
                             restarts: int = 3,
                             seed: int = 0,
                             initial: Optional[Tuple[KernelSpec, float]] = None,
                             max_evaluations: Optional[int] = None) -> HyperparameterFit:
    """
    Minimize the nll over kernel hyperparameters and noise by multi-start Nelder-Mead

    Args:
        data: Training pairs
        family: Kernel family to fit
        domain: Box for the kernel hyperparameters (family default when omitted)
        noise_domain: One-dimensional box for sigma_n
        restarts: Number of local searches (>= 1); the first starts at the box midpoint
        seed: Seed for the random starting points
        initial: Optional (spec, noise) used as an additional starting point
        max_evaluations: Cap on nll evaluations per local search

    Returns:
        HyperparameterFit(spec, noise_sigma, nll_value) of the best local minimum found
    """
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    family = family if isinstance(family, KernelFamily) else KernelFamily(family)
    d = data.input_dim
    n_kernel = family.arity(d)
    domain = domain if domain is not None else default_domain(family, d)
    noise_domain = noise_domain if noise_domain is not None else gp_noise_domain()
    if domain.dim != n_kernel:
        raise ValueError(f"{family.value} needs a {n_kernel}-dimensional domain, got {domain.dim}")
    if noise_domain.dim != 1:
        raise ValueError(f"noise_domain must be one-dimensional, got {noise_domain.dim}")
    joint = domain.concat(noise_domain)

    def objective(unit: np.ndarray) -> float:
        theta = joint.from_unit(unit)
        try:
            value = nll(data, KernelSpec(family, theta[:n_kernel], d), theta[n_kernel])
        except (FactorizationError, KernelError):
            return FAILED_NLL
        return value if np.isfinite(value) else FAILED_NLL

    rng = np.random.default_rng(seed)
    starts = [np.full(joint.dim, 0.5)]
    if initial is not None:
        init_spec, init_noise = initial
        starts.insert(0, np.clip(joint.to_unit(np.concatenate([np.asarray(init_spec.phi, dtype=float), [init_noise]])), 0.0, 1.0))
    while len(starts) < restarts + (1 if initial is not None else 0):
        starts.append(rng.uniform(size=joint.dim))

    max_evaluations = max_evaluations or 200 * (joint.dim + 1)
    best_unit, best_value = None, FAILED_NLL
    for start in starts:
        result = minimize(
            objective,
            start,
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * joint.dim,
            options={"maxfev": max_evaluations, "xatol": 1e-6, "fatol": 1e-10},
        )
        candidate = np.clip(result.x, 0.0, 1.0)
        value = objective(candidate)
        start_value = objective(start)
        if start_value < value:
            candidate, value = start, start_value
        if value < best_value:
            best_unit, best_value = candidate, value

    if best_unit is None:
        raise FactorizationError(f"All {len(starts)} starts failed to factorize for {family.value}")
    theta = joint.from_unit(best_unit)
    spec = KernelSpec(family, theta[:n_kernel], d)
    logger.debug(f"✅ GP hyperparameters {family.value}: phi={spec.phi}, noise={theta[n_kernel]:.3e}, nll={best_value:.4f}")
    return HyperparameterFit(spec=spec, noise_sigma=float(theta[n_kernel]), nll_value=float(best_value))
