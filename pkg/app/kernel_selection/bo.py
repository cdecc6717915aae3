"""
Bayesian Optimization Engine
Minimizes a black-box cost over a mixed space: a discrete kernel index j and the
continuous hyperparameters of candidate j (plus optional shared dimensions such as
the SVR tube width). GP surrogate on the encoded space with the index coordinate
rounded before kernel evaluation; EI, EI-plus and UCB acquisitions.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize
from scipy.stats import norm, qmc

from .errors import FactorizationError, ObjectiveEvaluationError
from .gp import Dataset, GpModel, fit, optimize_hyperparameters, predict_many
from .kernels import HyperparameterDomain, KernelFamily, default_domain

logger = logging.getLogger(__name__)

PENALTY_COST = 1e6
DEFAULT_LAMBDA = 0.5
ESCAPE_BETA = 16.0
ACQ_RESTARTS = 10
RAW_SAMPLES = 256
DESIGN_PER_CANDIDATE = 3
# Inactive hyperparameter slots sit at the middle of the unit box
PAD_VALUE = 0.5

Point = Tuple[int, Tuple[float, ...]]
Objective = Callable[[int, Tuple[float, ...]], float]


class AcquisitionKind(Enum):
    EI = "ei"
    EI_PLUS = "ei_plus"
    UCB = "ucb"


@dataclass(frozen=True)
class Candidate:
    """One discrete choice j with its continuous box Phi^j"""
    domain: HyperparameterDomain
    family: Optional[KernelFamily] = None
    label: str = ""

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return self.family.value if self.family is not None else "candidate"


@dataclass(frozen=True)
class SearchSpace:
    """Ordered kernel candidates plus continuous dimensions shared by all of them"""
    candidates: Tuple[Candidate, ...]
    extra_dims: Optional[HyperparameterDomain] = None

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if len(self.candidates) < 1:
            raise ValueError("Search space needs at least one candidate")

    @classmethod
    def from_families(cls, families: Sequence[KernelFamily], extra_dims: Optional[HyperparameterDomain] = None,
                      input_dim: int = 1, domains: Optional[Sequence[HyperparameterDomain]] = None) -> "SearchSpace":
        candidates = []
        for idx, family in enumerate(families):
            family = family if isinstance(family, KernelFamily) else KernelFamily(family)
            domain = domains[idx] if domains is not None else default_domain(family, input_dim)
            candidates.append(Candidate(domain=domain, family=family))
        return cls(tuple(candidates), extra_dims)

    @property
    def n_kernels(self) -> int:
        return len(self.candidates)

    @property
    def max_arity(self) -> int:
        return max(c.domain.dim for c in self.candidates)

    @property
    def n_extra(self) -> int:
        return self.extra_dims.dim if self.extra_dims is not None else 0

    @property
    def encoded_dim(self) -> int:
        return 1 + self.max_arity + self.n_extra

    def candidate(self, kernel_index: int) -> Candidate:
        if not 1 <= kernel_index <= self.n_kernels:
            raise ValueError(f"Kernel index {kernel_index} outside [1, {self.n_kernels}]")
        return self.candidates[kernel_index - 1]

    def domain(self, kernel_index: int) -> HyperparameterDomain:
        """Full box for candidate j: its own hyperparameters followed by the shared dimensions"""
        return self.candidate(kernel_index).domain.concat(self.extra_dims)

    def contains(self, kernel_index: Any, phi: Sequence[float]) -> bool:
        if int(kernel_index) != kernel_index or not 1 <= int(kernel_index) <= self.n_kernels:
            return False
        return self.domain(int(kernel_index)).contains(phi)

    def encode_unit(self, kernel_index: int, unit: Sequence[float]) -> np.ndarray:
        """Encoded vector from a point of candidate j's unit box"""
        unit = np.asarray(unit, dtype=float).reshape(-1)
        arity = self.candidate(kernel_index).domain.dim
        z = np.full(self.encoded_dim, PAD_VALUE)
        z[0] = float(kernel_index)
        z[1:1 + arity] = unit[:arity]
        if self.n_extra:
            z[1 + self.max_arity:] = unit[arity:]
        return z

    def encode(self, kernel_index: int, phi: Sequence[float]) -> np.ndarray:
        """[j, unit(phi^j) padded to the maximal arity, unit(shared dims)]"""
        return self.encode_unit(kernel_index, self.domain(kernel_index).to_unit(phi))

    def decode(self, z: Sequence[float]) -> Point:
        z = np.asarray(z, dtype=float).reshape(-1)
        kernel_index = int(np.clip(np.rint(z[0]), 1, self.n_kernels))
        arity = self.candidate(kernel_index).domain.dim
        unit = np.concatenate([z[1:1 + arity], z[1 + self.max_arity:]])
        return kernel_index, tuple(float(v) for v in self.domain(kernel_index).from_unit(unit))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "candidates": [
                {"family": c.family.value if c.family else None, "label": c.label, "domain": c.domain.to_dict()}
                for c in self.candidates
            ],
            "extra_dims": self.extra_dims.to_dict() if self.extra_dims is not None else None,
        }


@dataclass(frozen=True)
class Observation:
    kernel_index: int
    phi: Tuple[float, ...]
    cost: float
    trial_index: int
    failed: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kernel_index": self.kernel_index,
            "phi": list(self.phi),
            "cost": self.cost,
            "trial_index": self.trial_index,
            "failed": self.failed,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Observation":
        return cls(int(data["kernel_index"]), tuple(data["phi"]), float(data["cost"]),
                   int(data["trial_index"]), bool(data.get("failed", False)))


def integer_transform(Z: np.ndarray) -> np.ndarray:
    """Round the kernel-index coordinate so the surrogate sees integer indices only"""
    Z = np.array(Z, dtype=float, ndmin=2)
    Z[:, 0] = np.rint(Z[:, 0])
    return Z


@dataclass(frozen=True, eq=False)
class Surrogate:
    """GP on standardized costs over the encoded space"""
    model: GpModel
    y_mean: float
    y_std: float

    def predict(self, Z: Any) -> Tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation in cost units"""
        mean, variance = predict_many(self.model, integer_transform(Z))
        return mean * self.y_std + self.y_mean, np.sqrt(variance) * self.y_std

    @property
    def noise_std(self) -> float:
        return self.model.noise_sigma * self.y_std


def fit_surrogate(history: Sequence[Observation], space: SearchSpace, seed: int = 0,
                  previous: Optional[Surrogate] = None, restarts: int = 2) -> Surrogate:
    """
    Refit the surrogate GP by nll minimization on the current history

    Penalized evaluations enter with the worst regular cost so a single blow-up
    does not flatten the standardized landscape.
    """
    Z = integer_transform(np.array([space.encode(o.kernel_index, o.phi) for o in history]))
    costs = np.array([o.cost for o in history], dtype=float)
    failed = np.array([o.failed for o in history], dtype=bool)
    targets = costs.copy()
    if failed.any() and (~failed).any():
        targets[failed] = costs[~failed].max()
    y_mean = float(targets.mean())
    y_std = float(targets.std())
    if not np.isfinite(y_std) or y_std < 1e-12:
        y_std = 1.0
    data = Dataset(Z, (targets - y_mean) / y_std)

    D = space.encoded_dim
    domain = HyperparameterDomain((0.1,) + (0.05,) * D, (10.0,) + (20.0,) * D, (True,) * (D + 1))
    noise_domain = HyperparameterDomain((1e-4,), (1.0,), (True,))
    initial = None
    if previous is not None and previous.model.spec.input_dim == D:
        initial = (previous.model.spec, float(np.clip(previous.model.noise_sigma, 1e-4, 1.0)))
    fitted = optimize_hyperparameters(
        data, KernelFamily.SQUARED_EXPONENTIAL_ARD, domain, noise_domain,
        restarts=restarts, seed=seed, initial=initial,
    )
    model = fit(data, fitted.spec, fitted.noise_sigma)
    return Surrogate(model=model, y_mean=y_mean, y_std=y_std)


@dataclass
class BoState:
    """History, surrogate and incumbent trace of one BO run"""
    rng_seed: int = 0
    kind: AcquisitionKind = AcquisitionKind.EI_PLUS
    history: List[Observation] = field(default_factory=list)
    surrogate: Optional[Surrogate] = None
    incumbent_trace: List[float] = field(default_factory=list)
    escapes: int = 0

    @property
    def incumbent(self) -> Optional[Observation]:
        if not self.history:
            return None
        return min(self.history, key=lambda o: (o.cost, o.trial_index))

    def record(self, observation: Observation):
        self.history.append(observation)
        self.incumbent_trace.append(self.incumbent.cost)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rng_seed": self.rng_seed,
            "kind": self.kind.value,
            "history": [o.to_dict() for o in self.history],
            "incumbent_trace": list(self.incumbent_trace),
            "escapes": self.escapes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "BoState":
        state = cls(rng_seed=int(data["rng_seed"]), kind=AcquisitionKind(data["kind"]),
                    escapes=int(data.get("escapes", 0)))
        for item in data["history"]:
            state.record(Observation.from_dict(item))
        return state


def acquisition_ei(surrogate: Surrogate, best_cost: float, z: Any) -> Any:
    """Expected improvement below best_cost; zero wherever the posterior is certain"""
    mu, sigma = surrogate.predict(z)
    improvement = best_cost - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(sigma > 0.0, improvement / np.where(sigma > 0.0, sigma, 1.0), 0.0)
    ei = np.where(sigma > 0.0, improvement * norm.cdf(t) + sigma * norm.pdf(t), 0.0)
    ei = np.maximum(ei, 0.0)
    return float(ei[0]) if np.ndim(z) == 1 else ei


def acquisition_ei_plus(state: BoState, z: Any, lam: float = DEFAULT_LAMBDA) -> Any:
    """
    EI against the incumbent with the over-exploitation escape applied per point

    Points whose posterior std is already below lam times the estimated noise std
    carry no EI-plus value; when such a point is the EI argmax, propose_next
    substitutes a wide-UCB step. lam = 0 gives plain EI.
    """
    surrogate = state.surrogate
    ei = acquisition_ei(surrogate, state.incumbent.cost, z)
    if lam <= 0.0:
        return ei
    _, sigma = surrogate.predict(z)
    pinned = sigma < lam * surrogate.noise_std
    if np.ndim(z) == 1:
        return 0.0 if bool(pinned[0]) else ei
    return np.where(pinned, 0.0, ei)


def is_overexploiting(surrogate: Surrogate, z: Any, lam: float = DEFAULT_LAMBDA) -> bool:
    """True when the posterior std at z is below lam times the estimated noise std"""
    _, sigma = surrogate.predict(z)
    return bool(float(np.min(sigma)) < lam * surrogate.noise_std)


def acquisition_ucb(surrogate: Surrogate, z: Any, beta: float) -> Any:
    """Lower confidence bound mu - sqrt(beta) sigma (to be minimized)"""
    if beta < 0.0:
        raise ValueError(f"beta must be nonnegative, got {beta}")
    mu, sigma = surrogate.predict(z)
    value = mu - math.sqrt(beta) * sigma
    return float(value[0]) if np.ndim(z) == 1 else value


def ucb_beta(t: int) -> float:
    """Exploration weight beta_t = 2 log(t^2 + 1)"""
    return 2.0 * math.log(t * t + 1.0)


def _minimize_over_candidate(score: Callable[[np.ndarray], np.ndarray], space: SearchSpace, kernel_index: int,
                             rng: np.random.Generator, restarts: int, raw_samples: int,
                             seeds: Sequence[np.ndarray] = ()) -> Tuple[np.ndarray, float]:
    dim = space.domain(kernel_index).dim
    if dim == 0:
        return np.zeros(0), float(score(space.encode_unit(kernel_index, [])[None, :])[0])

    def encoded(units: np.ndarray) -> np.ndarray:
        return np.array([space.encode_unit(kernel_index, u) for u in units])

    raw = rng.uniform(size=(raw_samples, dim))
    if len(seeds):
        raw = np.vstack([raw, np.asarray(seeds, dtype=float).reshape(-1, dim)])
    raw_values = score(encoded(raw))
    order = np.argsort(raw_values, kind="stable")[:restarts]

    best_unit, best_value = raw[order[0]], float(raw_values[order[0]])
    for start in raw[order]:
        try:
            result = minimize(
                lambda u: float(score(encoded(np.clip(u, 0.0, 1.0)[None, :]))[0]),
                start,
                method="Nelder-Mead",
                bounds=[(0.0, 1.0)] * dim,
                options={"maxfev": 60 * (dim + 1), "xatol": 1e-4, "fatol": 1e-12},
            )
        except (ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.warning(f"⚠️ Acquisition search failed from {start}: {exc}")
            continue
        unit = np.clip(result.x, 0.0, 1.0)
        value = float(score(encoded(unit[None, :]))[0])
        if value < best_value:
            best_unit, best_value = unit, value
    return best_unit, best_value


def _argmin_over_space(score: Callable[[np.ndarray], np.ndarray], state: BoState, space: SearchSpace,
                       rng: np.random.Generator, restarts: int, raw_samples: int) -> Tuple[int, np.ndarray, float]:
    best: Optional[Tuple[int, np.ndarray, float]] = None
    for kernel_index in range(1, space.n_kernels + 1):
        observed = [space.domain(kernel_index).to_unit(o.phi) for o in state.history
                    if o.kernel_index == kernel_index]
        unit, value = _minimize_over_candidate(score, space, kernel_index, rng, restarts, raw_samples, observed)
        if best is None or value < best[2]:
            best = (kernel_index, unit, value)
    return best


def initial_design(space: SearchSpace, budget: int, seed: int = 0, initial: Optional[Point] = None,
                   per_candidate: int = DESIGN_PER_CANDIDATE) -> List[Point]:
    """
    The given initial point followed by scrambled Halton points per candidate,
    interleaved across candidates and capped at the budget
    """
    per_kernel: List[List[Point]] = []
    for kernel_index in range(1, space.n_kernels + 1):
        domain = space.domain(kernel_index)
        if domain.dim == 0:
            per_kernel.append([(kernel_index, ())])
            continue
        sampler = qmc.Halton(d=domain.dim, scramble=True, seed=np.random.default_rng([seed, kernel_index]))
        units = sampler.random(per_candidate)
        per_kernel.append([(kernel_index, tuple(float(v) for v in domain.from_unit(u))) for u in units])

    design: List[Point] = []
    if initial is not None:
        design.append((int(initial[0]), tuple(float(v) for v in initial[1])))
    for row in range(max(len(points) for points in per_kernel)):
        for points in per_kernel:
            if row < len(points) and points[row] not in design:
                design.append(points[row])
    return design[:max(budget, 0)]


def propose_next(state: BoState, space: SearchSpace, kind: AcquisitionKind = AcquisitionKind.EI_PLUS,
                 seed: int = 0, lam: float = DEFAULT_LAMBDA, restarts: int = ACQ_RESTARTS,
                 raw_samples: int = RAW_SAMPLES) -> Point:
    """
    Next (kernel_index, phi) to evaluate

    Maximizes the acquisition over every candidate's box by seeded multi-start
    Nelder-Mead and returns the best across candidates. Without history (or
    without a fitted surrogate) an initial-design point is returned.
    """
    if not state.history or state.surrogate is None:
        design = initial_design(space, len(state.history) + 1, seed)
        return design[len(state.history)] if len(design) > len(state.history) else _random_point(space, seed)

    rng = np.random.default_rng([seed, len(state.history)])
    surrogate = state.surrogate
    if kind is AcquisitionKind.UCB:
        beta = ucb_beta(len(state.history))
        score = lambda Z: acquisition_ucb(surrogate, Z, beta)
    else:
        best_cost = state.incumbent.cost
        score = lambda Z: -acquisition_ei(surrogate, best_cost, Z)

    try:
        kernel_index, unit, _ = _argmin_over_space(score, state, space, rng, restarts, raw_samples)
        if kind is AcquisitionKind.EI_PLUS and lam > 0.0 and is_overexploiting(
                surrogate, space.encode_unit(kernel_index, unit), lam):
            state.escapes += 1
            logger.debug(f"🔄 Over-exploitation at trial {len(state.history)}, switching to wide UCB")
            wide = lambda Z: acquisition_ucb(surrogate, Z, ESCAPE_BETA)
            kernel_index, unit, _ = _argmin_over_space(wide, state, space, rng, restarts, raw_samples)
    except (FactorizationError, ValueError, np.linalg.LinAlgError) as exc:
        logger.warning(f"⚠️ Acquisition optimization failed ({exc}); falling back to a random point")
        return _random_point(space, seed + len(state.history))

    domain = space.domain(kernel_index)
    return kernel_index, tuple(float(v) for v in domain.from_unit(unit))


def _random_point(space: SearchSpace, seed: int) -> Point:
    rng = np.random.default_rng([seed, 7919])
    kernel_index = int(rng.integers(1, space.n_kernels + 1))
    domain = space.domain(kernel_index)
    return kernel_index, tuple(float(v) for v in domain.sample(rng, 1)[0])


def _evaluate(objective: Objective, kernel_index: int, phi: Tuple[float, ...]) -> Tuple[float, bool]:
    try:
        cost = float(objective(kernel_index, phi))
    except Exception as exc:
        logger.error(f"❌ Objective failed at kernel {kernel_index}, phi={phi}: {exc}")
        raise ObjectiveEvaluationError(
            f"Objective failed at kernel {kernel_index}, phi={phi}: {exc}", kernel_index, phi
        ) from exc
    if not np.isfinite(cost) or cost >= PENALTY_COST:
        if not np.isfinite(cost):
            logger.warning(f"⚠️ Non-finite cost at kernel {kernel_index}, phi={phi}; recording penalty")
        return PENALTY_COST, True
    return cost, False


def run_bo(objective: Objective, space: SearchSpace, budget: int,
           kind: AcquisitionKind = AcquisitionKind.EI_PLUS, seed: int = 0,
           initial: Optional[Point] = None, lam: float = DEFAULT_LAMBDA,
           per_candidate: int = DESIGN_PER_CANDIDATE, restarts: int = ACQ_RESTARTS,
           raw_samples: int = RAW_SAMPLES,
           callback: Optional[Callable[[BoState], None]] = None) -> BoState:
    """
    Minimize objective(kernel_index, phi) with a fixed evaluation budget

    Args:
        objective: Black-box cost of one point
        space: Mixed search space
        budget: Total number of objective evaluations (>= 1)
        kind: Acquisition function
        seed: Seed for design, surrogate fitting and acquisition search
        initial: Point evaluated first (e.g. the data-based selection)
        lam: EI-plus over-exploitation threshold
        per_candidate: Quasi-random design points per candidate
        restarts: Local searches per candidate when maximizing the acquisition
        raw_samples: Random screening points per candidate
        callback: Called with the state after every evaluation

    Returns:
        BoState with the full history and incumbent trace
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    if initial is not None and not space.contains(initial[0], initial[1]):
        raise ValueError(f"Initial point {initial} is outside the search space")
    state = BoState(rng_seed=seed, kind=kind)
    design = initial_design(space, budget, seed, initial, per_candidate)
    logger.info(f"🔄 BO ({kind.value}) over {space.n_kernels} candidates: "
                f"{len(design)} design points, budget {budget}")

    for trial in range(budget):
        if trial < len(design):
            kernel_index, phi = design[trial]
        else:
            try:
                state.surrogate = fit_surrogate(state.history, space, seed=seed + trial, previous=state.surrogate)
                kernel_index, phi = propose_next(state, space, kind, seed, lam, restarts, raw_samples)
            except FactorizationError as exc:
                logger.warning(f"⚠️ Surrogate fit failed at trial {trial} ({exc}); using a random point")
                kernel_index, phi = _random_point(space, seed + trial)
        cost, failed = _evaluate(objective, kernel_index, phi)
        state.record(Observation(kernel_index, phi, cost, trial, failed))
        logger.debug(f"Trial {trial}: kernel {kernel_index} phi={phi} cost={cost:.6g} "
                     f"incumbent={state.incumbent.cost:.6g}")
        if callback is not None:
            callback(state)

    best = state.incumbent
    logger.info(f"✅ BO finished: best cost {best.cost:.6g} at kernel {best.kernel_index}, phi={best.phi}")
    return state


def run_quadratic_demo(seed: int = 0, iterations: int = 30, minimizer: float = 0.3) -> BoState:
    """UCB on (x - minimizer)^2 over [0, 1]; the incumbent should land next to the minimizer"""
    space = SearchSpace((Candidate(HyperparameterDomain((0.0,), (1.0,), (False,)), label="x"),))
    return run_bo(lambda _, phi: (phi[0] - minimizer) ** 2, space, iterations, AcquisitionKind.UCB, seed)
