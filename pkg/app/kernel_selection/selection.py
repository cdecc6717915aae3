"""
Model Selection Pipelines
Data-based selection (cross-validation loss), closed-loop selection (task cost of
the controlled plant), the retrained "after trials" variant, a likelihood baseline
for GP models and repeated-seed statistics.
"""

import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .bo import PENALTY_COST, AcquisitionKind, BoState, Candidate, Point, SearchSpace, run_bo
from .errors import FactorizationError, KernelError, ModelPredictionError, SvrConvergenceError
from .gp import Dataset, fit, optimize_hyperparameters, predict_many
from .kernels import (HyperparameterDomain, KernelFamily, KernelSpec, gp_noise_domain,
                      svr_epsilon_domain)
from .plant import (DEFAULT_GUARD, DEFAULT_HORIZON, ClosedLoopTrace, CostKind, CostSpec, ModelHandle,
                    evaluate_cost, rollout)
from .rkhs import build_superset
from .svr import DEFAULT_BOX_C, DEFAULT_MAX_ITER, DEFAULT_TOL, predict_svr_many, train_svr

logger = logging.getLogger(__name__)

DEFAULT_FOLDS = 5
DATA_BASED_BUDGET = 30
CLOSED_LOOP_BUDGET = 50
# Pooled trial transitions are thinned to this many before retraining
AT_MAX_TRANSITIONS = 500
# Failures that make a candidate unusable rather than the run invalid
TRAINING_FAILURES = (SvrConvergenceError, FactorizationError, ModelPredictionError, KernelError)


class ModelKind(Enum):
    SVR = "svr"
    GP = "gp"


@dataclass(frozen=True)
class ModelSettings:
    """How a dynamics model is trained from a search-space point"""
    kind: ModelKind = ModelKind.SVR
    box_c: float = DEFAULT_BOX_C
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    # Used when the space carries no epsilon / noise dimension
    fixed_extra: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind if isinstance(self.kind, ModelKind) else ModelKind(self.kind))


@dataclass(frozen=True)
class ClosedLoopTask:
    """Initial state(s), horizon, divergence guard and cost of the control task"""
    x0: float = 3.0
    horizon: int = DEFAULT_HORIZON
    guard: float = DEFAULT_GUARD
    cost_kind: CostKind = CostKind.TIME_WEIGHTED_QUADRATIC_STATE
    initial_states: Optional[Tuple[float, ...]] = None

    @property
    def cost_spec(self) -> CostSpec:
        return CostSpec(self.cost_kind, self.horizon)

    def states(self) -> Tuple[float, ...]:
        if self.initial_states:
            return tuple(float(x) for x in self.initial_states)
        return (float(self.x0),)


@dataclass
class SelectionResult:
    """Selected kernel and hyperparameters with their data-based loss and closed-loop cost"""
    method: str
    kernel_index: int
    kernel_name: str
    phi: Tuple[float, ...]
    kernel_phi: Tuple[float, ...]
    loss: float
    cost: float
    svr_epsilon: Optional[float] = None
    noise_sigma: Optional[float] = None
    seed: int = 0
    bo_state: Optional[BoState] = None
    traces: List[ClosedLoopTrace] = field(default_factory=list, repr=False)

    @property
    def point(self) -> Point:
        return self.kernel_index, self.phi

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "kernel": self.kernel_name,
            "kernel_index": self.kernel_index,
            "phi": list(self.kernel_phi),
            "svr_epsilon": self.svr_epsilon,
            "noise_sigma": self.noise_sigma,
            "loss": self.loss,
            "cost": self.cost,
            "seed": self.seed,
        }


def build_space(families: Sequence[KernelFamily], model_kind: ModelKind = ModelKind.SVR,
                domains: Optional[Sequence[HyperparameterDomain]] = None,
                extra: Optional[HyperparameterDomain] = None, input_dim: int = 1) -> SearchSpace:
    """Kernel candidates plus the shared epsilon (SVR) or noise (GP) dimension"""
    model_kind = model_kind if isinstance(model_kind, ModelKind) else ModelKind(model_kind)
    if extra is None:
        extra = svr_epsilon_domain() if model_kind is ModelKind.SVR else gp_noise_domain()
    return SearchSpace.from_families(families, extra, input_dim, domains)


def resolve_point(space: SearchSpace, kernel_index: int, phi: Sequence[float], settings: ModelSettings,
                  input_dim: int = 1) -> Tuple[KernelSpec, float]:
    """Split a search-space point into the kernel spec and the epsilon / noise value"""
    candidate = space.candidate(kernel_index)
    if candidate.family is None:
        raise KernelError(f"Candidate {candidate.name} has no kernel family")
    arity = candidate.family.arity(input_dim)
    phi = tuple(float(v) for v in phi)
    extra = phi[arity] if len(phi) > arity else settings.fixed_extra
    return KernelSpec(candidate.family, phi[:arity], input_dim), extra


def train_dynamics_model(data: Dataset, spec: KernelSpec, extra: float, settings: ModelSettings) -> ModelHandle:
    if settings.kind is ModelKind.SVR:
        return ModelHandle.svr(train_svr(data, spec, extra, settings.box_c, settings.tol, settings.max_iter))
    return ModelHandle.gp(fit(data, spec, extra))


def _predict_points(handle: ModelHandle, points: np.ndarray) -> np.ndarray:
    if handle.svr_model is not None:
        return predict_svr_many(handle.svr_model, points)
    mean, _ = predict_many(handle.gp_model, points)
    return mean


def cross_validation_loss(data: Dataset, spec: KernelSpec, epsilon: float, folds: int = DEFAULT_FOLDS,
                          seed: int = 0, settings: Optional[ModelSettings] = None) -> float:
    """
    Mean squared held-out error over seeded k-fold splits

    The indices are shuffled once with the seed and cut into contiguous folds; each
    fold is predicted by a model trained on its complement. With folds = m this is
    leave-one-out and the result does not depend on the seed.
    """
    settings = settings or ModelSettings()
    if folds < 2 or folds > data.m:
        raise ValueError(f"folds must lie in [2, {data.m}], got {folds}")
    order = np.random.default_rng(seed).permutation(data.m)
    squared_errors = np.zeros(data.m)
    for held_out in np.array_split(order, folds):
        train_idx = np.setdiff1d(order, held_out)
        model = train_dynamics_model(data.subset(train_idx), spec, epsilon, settings)
        residual = data.targets[held_out] - _predict_points(model, data.inputs[held_out])
        squared_errors[held_out] = residual ** 2
    return float(np.mean(squared_errors))


def closed_loop_cost(model: ModelHandle, task: ClosedLoopTask) -> Tuple[float, List[ClosedLoopTrace]]:
    """Mean task cost over the task's initial states, capped at the penalty"""
    traces = [rollout(x0, task.horizon, model, task.guard) for x0 in task.states()]
    cost = float(np.mean([evaluate_cost(trace, task.cost_spec) for trace in traces]))
    return min(cost, PENALTY_COST), traces


def closed_loop_cost_at(data: Dataset, space: SearchSpace, point: Point, task: ClosedLoopTask,
                        settings: Optional[ModelSettings] = None) -> float:
    """Train at `point`, roll out and score; unusable models cost the penalty"""
    return ClosedLoopObjective(data, space, task, settings)(*point)


class ClosedLoopObjective:
    """Train the model at a point, run the closed loop and return its cost; keeps every trace"""

    def __init__(self, data: Dataset, space: SearchSpace, task: ClosedLoopTask,
                 settings: Optional[ModelSettings] = None):
        self.data = data
        self.space = space
        self.task = task
        self.settings = settings or ModelSettings()
        self.traces: List[ClosedLoopTrace] = []

    def __call__(self, kernel_index: int, phi: Tuple[float, ...]) -> float:
        try:
            spec, extra = resolve_point(self.space, kernel_index, phi, self.settings, self.data.input_dim)
            model = train_dynamics_model(self.data, spec, extra, self.settings)
            cost, traces = closed_loop_cost(model, self.task)
        except TRAINING_FAILURES as exc:
            logger.warning(f"⚠️ Penalty cost for kernel {kernel_index}, phi={phi}: {exc}")
            return PENALTY_COST
        self.traces.extend(traces)
        return cost


class CrossValidationObjective:
    def __init__(self, data: Dataset, space: SearchSpace, folds: int, seed: int,
                 settings: Optional[ModelSettings] = None):
        self.data = data
        self.space = space
        self.folds = folds
        self.seed = seed
        self.settings = settings or ModelSettings()

    def __call__(self, kernel_index: int, phi: Tuple[float, ...]) -> float:
        try:
            spec, extra = resolve_point(self.space, kernel_index, phi, self.settings, self.data.input_dim)
            return cross_validation_loss(self.data, spec, extra, self.folds, self.seed, self.settings)
        except TRAINING_FAILURES as exc:
            logger.warning(f"⚠️ Penalty loss for kernel {kernel_index}, phi={phi}: {exc}")
            return PENALTY_COST


def _result(method: str, space: SearchSpace, point: Point, loss: float, cost: float, settings: ModelSettings,
            seed: int, input_dim: int, state: Optional[BoState] = None,
            traces: Optional[List[ClosedLoopTrace]] = None) -> SelectionResult:
    kernel_index, phi = point
    spec, extra = resolve_point(space, kernel_index, phi, settings, input_dim)
    return SelectionResult(
        method=method,
        kernel_index=kernel_index,
        kernel_name=space.candidate(kernel_index).name,
        phi=tuple(phi),
        kernel_phi=spec.phi,
        loss=loss,
        cost=cost,
        svr_epsilon=extra if settings.kind is ModelKind.SVR else None,
        noise_sigma=extra if settings.kind is ModelKind.GP else None,
        seed=seed,
        bo_state=state,
        traces=traces or [],
    )


def data_based_selection(data: Dataset, space: SearchSpace, budget: int = DATA_BASED_BUDGET, seed: int = 0,
                         task: Optional[ClosedLoopTask] = None, settings: Optional[ModelSettings] = None,
                         folds: int = DEFAULT_FOLDS, kind: AcquisitionKind = AcquisitionKind.EI_PLUS,
                         method: str = "Data-based") -> SelectionResult:
    """
    BO over the cross-validation loss; the closed loop is only run once, on the result

    Returns:
        SelectionResult with loss = best CV loss and cost = closed-loop cost of that point
    """
    task = task or ClosedLoopTask()
    settings = settings or ModelSettings()
    logger.info(f"🔄 {method} selection on {data.m} points, budget {budget}, seed {seed}")
    state = run_bo(CrossValidationObjective(data, space, folds, seed, settings), space, budget, kind, seed)
    best = state.incumbent
    point = (best.kernel_index, best.phi)
    objective = ClosedLoopObjective(data, space, task, settings)
    cost = objective(*point)
    result = _result(method, space, point, best.cost, cost, settings, seed, data.input_dim, state, objective.traces)
    logger.info(f"✅ {method}: {result.kernel_name} phi={result.kernel_phi} loss={result.loss:.4f} "
                f"cost={result.cost:.4f}")
    return result


def closed_loop_selection(data: Dataset, space: SearchSpace, task: Optional[ClosedLoopTask] = None,
                          budget: int = CLOSED_LOOP_BUDGET, seed: int = 0, initial: Optional[Point] = None,
                          settings: Optional[ModelSettings] = None, kind: AcquisitionKind = AcquisitionKind.EI_PLUS,
                          folds: int = DEFAULT_FOLDS) -> SelectionResult:
    """
    BO over the closed-loop cost of the trained model

    Args:
        data: Training data of the dynamics model
        space: Kernel candidates and hyperparameter boxes
        task: Initial state(s), horizon, guard and cost
        budget: Number of closed-loop evaluations (>= 1)
        seed: Run seed
        initial: Point evaluated first, typically the data-based selection
        settings: Model training settings
        kind: Acquisition function
        folds: Folds for the reported data-based loss of the selection

    Returns:
        SelectionResult of the incumbent, with every rollout trace of the run
    """
    if budget < 1:
        raise ValueError(f"budget must be >= 1, got {budget}")
    task = task or ClosedLoopTask()
    settings = settings or ModelSettings()
    objective = ClosedLoopObjective(data, space, task, settings)
    state = run_bo(objective, space, budget, kind, seed, initial)
    best = state.incumbent
    point = (best.kernel_index, best.phi)
    loss = CrossValidationObjective(data, space, folds, seed, settings)(*point)
    result = _result("Closed-loop", space, point, loss, best.cost, settings, seed, data.input_dim, state,
                     objective.traces)
    logger.info(f"✅ Closed-loop (seed {seed}): {result.kernel_name} phi={result.kernel_phi} cost={result.cost:.4f}")
    return result


def merge_trial_data(data: Dataset, traces: Sequence[ClosedLoopTrace],
                     max_transitions: Optional[int] = None) -> Dataset:
    """
    Append the observed transitions (x_k, x_{k+1} - u_k) of every trace

    A state visited by several traces is kept once. With `max_transitions` the pooled
    transitions are thinned to that many, evenly spaced over the sorted states.
    """
    observed = [trace.transitions() for trace in traces if trace.steps]
    if not observed:
        return data
    inputs, first = np.unique(np.vstack([d.inputs for d in observed]), axis=0, return_index=True)
    targets = np.concatenate([d.targets for d in observed])[first]
    if max_transitions is not None and inputs.shape[0] > max_transitions:
        chosen = np.unique(np.linspace(0, inputs.shape[0] - 1, max_transitions).round().astype(int))
        inputs, targets = inputs[chosen], targets[chosen]
    return data.append(Dataset(inputs, targets))


def data_based_after_trials(data: Dataset, trials: Union[SelectionResult, Sequence[SelectionResult]],
                            space: SearchSpace, budget: int = DATA_BASED_BUDGET, seed: int = 0,
                            task: Optional[ClosedLoopTask] = None,
                            settings: Optional[ModelSettings] = None, folds: int = DEFAULT_FOLDS,
                            kind: AcquisitionKind = AcquisitionKind.EI_PLUS,
                            max_transitions: Optional[int] = AT_MAX_TRANSITIONS) -> SelectionResult:
    """Data-based selection retrained on the original data plus the transitions of every run in `trials`"""
    if isinstance(trials, SelectionResult):
        trials = [trials]
    merged = merge_trial_data(data, [trace for run in trials for trace in run.traces], max_transitions)
    logger.info(f"🔄 Retraining with {merged.m - data.m} transitions from {len(trials)} closed-loop runs")
    return data_based_selection(merged, space, budget, seed, task, settings, folds, kind, method="Data-based AT")



def superset_space(spec: KernelSpec, extra: Optional[float] = None, shrink: float = 0.5,
                   grow: float = 2.0) -> SearchSpace:
    """
    One-candidate space around a data-based selection

    The box [shrink * phi*, grow * phi*] covers the kernel hyperparameters and, when
    given, the epsilon / noise value, so the selected point lies strictly inside.
    """
    centre = tuple(spec.phi) + ((float(extra),) if extra is not None else ())
    if not centre:
        raise ValueError(f"{spec.family.value} with no extra dimension has nothing to search")
    domain = build_superset(centre, shrink, grow)
    return SearchSpace((Candidate(domain=domain, family=spec.family, label=f"{spec.family.value} superset"),))


def likelihood_selection(data: Dataset, family: KernelFamily, task: Optional[ClosedLoopTask] = None,
                         domain: Optional[HyperparameterDomain] = None,
                         noise_domain: Optional[HyperparameterDomain] = None,
                         restarts: int = 3, seed: int = 0) -> SelectionResult:
    """GP hyperparameters by marginal likelihood; loss is the minimal nll"""
    task = task or ClosedLoopTask()
    family = family if isinstance(family, KernelFamily) else KernelFamily(family)
    fitted = optimize_hyperparameters(data, family, domain, noise_domain, restarts=restarts, seed=seed)
    try:
        cost, traces = closed_loop_cost(ModelHandle.gp(fit(data, fitted.spec, fitted.noise_sigma)), task)
    except TRAINING_FAILURES as exc:
        logger.warning(f"⚠️ Likelihood selection {family.value} is unusable in closed loop: {exc}")
        cost, traces = PENALTY_COST, []
    logger.info(f"✅ Likelihood selection {family.value}: phi={fitted.spec.phi} "
                f"noise={fitted.noise_sigma:.3e} nll={fitted.nll_value:.4f} cost={cost:.4f}")
    return SelectionResult(
        method="Likelihood",
        kernel_index=1,
        kernel_name=family.value,
        phi=tuple(fitted.spec.phi) + (fitted.noise_sigma,),
        kernel_phi=fitted.spec.phi,
        loss=fitted.nll_value,
        cost=cost,
        noise_sigma=fitted.noise_sigma,
        seed=seed,
        traces=traces,
    )


@dataclass
class StudySummary:
    """Incumbent curves and selections of repeated closed-loop runs"""
    results: List[SelectionResult]
    curve_mean: np.ndarray
    curve_std: np.ndarray

    @property
    def final_costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.results])

    @property
    def kernel_counts(self) -> Dict[str, int]:
        return dict(Counter(r.kernel_name for r in self.results))

    @property
    def majority_kernel(self) -> str:
        # ties go to the kernel selected first
        return Counter(r.kernel_name for r in self.results).most_common(1)[0][0]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "trial": np.arange(1, self.curve_mean.size + 1),
            "mean": self.curve_mean,
            "std": self.curve_std,
        })


def repeated_study(n_reps: int, budget: int = CLOSED_LOOP_BUDGET, base_seed: int = 0,
                   data: Optional[Dataset] = None, space: Optional[SearchSpace] = None,
                   task: Optional[ClosedLoopTask] = None, initial: Optional[Point] = None,
                   settings: Optional[ModelSettings] = None, kind: AcquisitionKind = AcquisitionKind.EI_PLUS,
                   workers: int = 1) -> StudySummary:
    """
    Closed-loop selection repeated with seeds base_seed .. base_seed + n_reps - 1

    Repetitions share no mutable state, so `workers` > 1 runs them on a thread pool;
    results keep seed order either way.
    """
    if n_reps < 1:
        raise ValueError(f"n_reps must be >= 1, got {n_reps}")
    if data is None or space is None:
        raise ValueError("repeated_study needs data and a search space")
    seeds = [base_seed + r for r in range(n_reps)]
    logger.info(f"🔄 Repeated study: {n_reps} runs x {budget} trials, seeds {seeds[0]}..{seeds[-1]}")

    def run(seed: int) -> SelectionResult:
        return closed_loop_selection(data, space, task, budget, seed, initial, settings, kind)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, seeds))
    else:
        results = [run(seed) for seed in seeds]

    curves = np.array([r.bo_state.incumbent_trace for r in results], dtype=float)
    summary = StudySummary(results=results, curve_mean=curves.mean(axis=0), curve_std=curves.std(axis=0))
    logger.info(f"✅ Repeated study: mean final cost {summary.final_costs.mean():.4f}, "
                f"kernels {summary.kernel_counts}")
    return summary


def rollout_selection(data: Dataset, space: SearchSpace, point: Point, task: Optional[ClosedLoopTask] = None,
                      settings: Optional[ModelSettings] = None) -> List[ClosedLoopTrace]:
    """Closed-loop traces of the model trained at `point` (empty when the model is unusable)"""
    objective = ClosedLoopObjective(data, space, task or ClosedLoopTask(), settings)
    objective(*point)
    return objective.traces
