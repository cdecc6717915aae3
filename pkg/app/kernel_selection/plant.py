"""
Closed-Loop Simulation
Scalar benchmark plant, feedback-linearizing control law, rollouts and the task
cost of one closed-loop run.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .bo import PENALTY_COST
from .errors import ModelPredictionError
from .gp import Dataset, GpModel, predict_many
from .svr import SvrModel, predict_svr_many

logger = logging.getLogger(__name__)

DEFAULT_GUARD = 1e3
DEFAULT_HORIZON = 10
# Target closed loop x_{k+1} = x_k / 2
CLOSED_LOOP_GAIN = 0.5


def plant_dynamics(x: float) -> float:
    """Unforced part f(x) = exp(-x^2 / 100) sin(x) + x / 3"""
    return math.exp(-x * x / 100.0) * math.sin(x) + x / 3.0


def step_plant(x: float, u: float) -> float:
    """x_{k+1} = f(x_k) + u_k"""
    return plant_dynamics(x) + u


class ModelVariant(Enum):
    SVR = "svr"
    GP = "gp"
    PERFECT = "perfect"
    ZERO = "zero"


@dataclass(frozen=True, eq=False)
class ModelHandle:
    """Dynamics model f_hat used by the controller"""
    variant: ModelVariant
    svr_model: Optional[SvrModel] = None
    gp_model: Optional[GpModel] = None

    @classmethod
    def svr(cls, model: SvrModel) -> "ModelHandle":
        return cls(ModelVariant.SVR, svr_model=model)

    @classmethod
    def gp(cls, model: GpModel) -> "ModelHandle":
        return cls(ModelVariant.GP, gp_model=model)

    @classmethod
    def perfect(cls) -> "ModelHandle":
        return cls(ModelVariant.PERFECT)

    @classmethod
    def zero(cls) -> "ModelHandle":
        return cls(ModelVariant.ZERO)

    def predict(self, x: float) -> float:
        if self.variant is ModelVariant.PERFECT:
            return plant_dynamics(x)
        if self.variant is ModelVariant.ZERO:
            return 0.0
        if self.variant is ModelVariant.SVR:
            return float(predict_svr_many(self.svr_model, [[x]])[0])
        mean, _ = predict_many(self.gp_model, [[x]])
        return float(mean[0])


def control(x: float, model: ModelHandle) -> float:
    """Feedback linearization u = -f_hat(x) + x / 2"""
    try:
        f_hat = model.predict(x)
    except Exception as exc:
        raise ModelPredictionError(f"{model.variant.value} model failed to predict at x={x}: {exc}") from exc
    if not np.isfinite(f_hat):
        raise ModelPredictionError(f"{model.variant.value} model returned {f_hat} at x={x}")
    return -f_hat + CLOSED_LOOP_GAIN * x


@dataclass(frozen=True, eq=False)
class ClosedLoopTrace:
    """States x_0..x_n, inputs u_0..u_{n-1} and outputs y_k = x_k of one run"""
    states: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    diverged: bool = False
    reference: float = 0.0

    @property
    def steps(self) -> int:
        return self.inputs.size

    def errors(self) -> np.ndarray:
        return self.reference - self.outputs

    def transitions(self) -> Dataset:
        """Pairs (x_k, x_{k+1} - u_k): observations of the unforced dynamics"""
        n = self.inputs.size
        return Dataset(self.states[:n].reshape(-1, 1), self.states[1:n + 1] - self.inputs)

    def to_frame(self, cost_spec: Optional["CostSpec"] = None) -> pd.DataFrame:
        """Columns k, x, u, y, cost_increment (u is empty on the final state)"""
        n = self.states.size
        inputs = np.full(n, np.nan)
        inputs[:self.inputs.size] = self.inputs
        frame = pd.DataFrame({
            "k": np.arange(n),
            "x": self.states,
            "u": inputs,
            "y": self.outputs,
        })
        increments = cost_increments(self, cost_spec or CostSpec())
        padded = np.full(n, 0.0)
        padded[:increments.size] = increments
        frame["cost_increment"] = padded
        return frame


class CostKind(Enum):
    TIME_WEIGHTED_QUADRATIC_STATE = "TimeWeightedQuadraticState"
    MEAN_SQUARED_ERROR = "MeanSquaredError"


@dataclass(frozen=True)
class CostSpec:
    kind: CostKind = CostKind.TIME_WEIGHTED_QUADRATIC_STATE
    horizon: int = DEFAULT_HORIZON

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, CostKind) else CostKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if int(self.horizon) < 1:
            raise ValueError(f"Cost horizon must be >= 1, got {self.horizon}")


def rollout(x0: float, horizon: int, model: ModelHandle, guard: float = DEFAULT_GUARD,
            reference: float = 0.0, step: Callable[[float, float], float] = step_plant) -> ClosedLoopTrace:
    """
    Run the closed loop from x0 for `horizon` steps

    Args:
        x0: Initial state
        horizon: Number of control steps (>= 1)
        model: Model used by the control law
        guard: Divergence threshold on |x_k|; the trace is truncated when exceeded
        reference: Constant reference (zero for the regulation task)
        step: Plant transition x_{k+1} = step(x_k, u_k)

    Returns:
        ClosedLoopTrace with y_k = x_k
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if guard <= 0.0:
        raise ValueError(f"guard must be positive, got {guard}")
    states: List[float] = [float(x0)]
    inputs: List[float] = []
    diverged = not np.isfinite(x0) or abs(x0) > guard
    for _ in range(horizon):
        if diverged:
            break
        x = states[-1]
        u = control(x, model)
        x_next = step(x, u)
        inputs.append(u)
        states.append(x_next)
        if not np.isfinite(x_next) or abs(x_next) > guard:
            diverged = True
    if diverged:
        logger.debug(f"⚠️ Closed loop from x0={x0} left the guard |x| <= {guard:g}")
    states_arr = np.asarray(states, dtype=float)
    return ClosedLoopTrace(
        states=states_arr,
        inputs=np.asarray(inputs, dtype=float),
        outputs=states_arr.copy(),
        diverged=diverged,
        reference=reference,
    )


def cost_increments(trace: ClosedLoopTrace, spec: CostSpec) -> np.ndarray:
    """Per-step terms c(y_k, u_k) for k < horizon (diverged traces have none)"""
    if trace.diverged:
        return np.zeros(0)
    errors = trace.errors()[:spec.horizon]
    if spec.kind is CostKind.TIME_WEIGHTED_QUADRATIC_STATE:
        return np.arange(errors.size) * errors ** 2
    return errors ** 2 / errors.size


def evaluate_cost(trace: ClosedLoopTrace, spec: CostSpec) -> float:
    """
    Task cost of a trace

    TimeWeightedQuadraticState sums k * e_k^2 for k < horizon; MeanSquaredError
    averages e_k^2. Diverged traces cost the penalty constant.
    """
    if trace.diverged:
        return PENALTY_COST
    if trace.outputs.size < spec.horizon:
        raise ValueError(f"Trace has {trace.outputs.size} outputs, cost horizon is {spec.horizon}")
    return float(np.sum(cost_increments(trace, spec)))


def expected_cost(initial_states: Sequence[float], horizon: int, model: ModelHandle, spec: CostSpec,
                  guard: float = DEFAULT_GUARD) -> float:
    """Mean cost over several initial states (a single state reduces to evaluate_cost)"""
    costs = [evaluate_cost(rollout(x0, horizon, model, guard), spec) for x0 in initial_states]
    return float(np.mean(costs))


def make_training_data(n_points: int = 11, low: float = -10.0, high: float = 10.0) -> Dataset:
    """Evenly spaced states with unforced successors x_{k+1} = f(x_k)"""
    states = np.linspace(low, high, n_points)
    return Dataset(states.reshape(-1, 1), np.array([step_plant(x, 0.0) for x in states]))


def trace_summary(trace: ClosedLoopTrace, spec: CostSpec) -> Dict[str, Any]:
    return {
        "x0": float(trace.states[0]),
        "steps": trace.steps,
        "diverged": trace.diverged,
        "final_state": float(trace.states[-1]),
        "cost": evaluate_cost(trace, spec),
    }
