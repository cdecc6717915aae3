"""
Epsilon-insensitive Support Vector Regression
Dual solver by sequential pairwise optimization with second-order working-set
selection, in the two-copy (alpha, alpha*) formulation. When pairwise progress
stalls (nearly singular Gram matrices such as the cubic polynomial kernel on
wide inputs) the iterate is finished by an exact active-set refinement.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh, null_space

from .errors import KernelError, SvrConvergenceError
from .gp import Dataset
from .kernels import KernelSpec, as_rows, cross_kernel, gram_matrix

logger = logging.getLogger(__name__)

DEFAULT_BOX_C = 10.0
DEFAULT_TOL = 1e-4
DEFAULT_MAX_ITER = 100_000
# Curvature floor for non-positive pair curvature
TAU = 1e-12
SV_THRESHOLD = 1e-12
# A pairwise window that does not halve the best KKT gap hands over to the active-set step
STALL_WINDOW = 500
STALL_RATIO = 0.5
# Reduced-Hessian eigenvalues below this fraction of the largest count as flat
EIG_RTOL = 1e-10
RAY_FLOOR = 1e-3
STEP_FLOOR = 1e-13


@dataclass(frozen=True, eq=False)
class SvrModel:
    """Trained SVR: f(x) = sum_i beta_i k(x, c_i) + bias over the support vectors c_i"""
    spec: KernelSpec
    epsilon: float
    box_c: float
    centers: np.ndarray
    duals: np.ndarray
    bias: float
    iterations: int = 0
    dual_objective: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kernel": self.spec.to_dict(),
            "epsilon": self.epsilon,
            "box_c": self.box_c,
            "centers": self.centers.tolist(),
            "duals": self.duals.tolist(),
            "bias": self.bias,
            "iterations": self.iterations,
            "dual_objective": self.dual_objective,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SvrModel":
        centers = np.asarray(data["centers"], dtype=float)
        input_dim = centers.shape[1] if centers.ndim == 2 and centers.size else None
        spec = KernelSpec.from_dict(data["kernel"], input_dim=input_dim)
        return cls(
            spec=spec,
            epsilon=float(data["epsilon"]),
            box_c=float(data["box_c"]),
            centers=centers.reshape(-1, spec.input_dim),
            duals=np.asarray(data["duals"], dtype=float),
            bias=float(data["bias"]),
            iterations=int(data.get("iterations", 0)),
            dual_objective=float(data.get("dual_objective", 0.0)),
        )


def _solve_dual(K: np.ndarray, z: np.ndarray, epsilon: float, box_c: float,
                tol: float, max_iter: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """
    Minimize 1/2 a^T Q a + p^T a  s.t.  y^T a = 0, 0 <= a <= C

    with a = [alpha; alpha*], y = [+1; -1], p = [eps - z; eps + z] and
    Q_st = y_s y_t K_st. Returns (a, gradient, y, iterations).
    """
    m = z.size
    y = np.concatenate([np.ones(m), -np.ones(m)])
    p = np.concatenate([epsilon - z, epsilon + z])
    Q = np.block([[K, -K], [-K, K]])
    QD = np.diag(Q).copy()
    a = np.zeros(2 * m)
    G = p.copy()
    C = box_c
    window = max(STALL_WINDOW, 40 * m)
    best_gap, window_gap = np.inf, np.inf

    for iteration in range(max_iter):
        up, low, score = _working_sets(a, G, y, C)
        if not up.any() or not low.any():
            return a, G, y, iteration
        i = int(np.argmax(np.where(up, score, -np.inf)))
        g_max = score[i]
        gap = g_max - np.min(np.where(low, score, np.inf))
        if gap < tol:
            return a, G, y, iteration

        window_gap = min(window_gap, gap)
        if (iteration + 1) % window == 0:
            if window_gap > STALL_RATIO * best_gap:
                logger.debug(f"🔄 Pairwise solver stalled at gap {window_gap:.3e}; refining the active set")
                a, G, steps = _refine_active_set(Q, p, y, a, C, tol, max_steps=20 * a.size + 100)
                return a, G, y, iteration + steps
            best_gap, window_gap = min(best_gap, window_gap), np.inf

        # second-order choice of the partner j among violating lower-set indices
        b = g_max - score
        quad = QD[i] + QD - 2.0 * y[i] * y * Q[i]
        quad = np.where(quad > 0.0, quad, TAU)
        gain = np.where(low & (b > 0.0), -(b * b) / quad, np.inf)
        j = int(np.argmin(gain))

        Qi, Qj = Q[i], Q[j]
        old_ai, old_aj = a[i], a[j]
        if y[i] != y[j]:
            curvature = QD[i] + QD[j] + 2.0 * Qi[j]
            curvature = curvature if curvature > 0.0 else TAU
            delta = (-G[i] - G[j]) / curvature
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0.0:
                if a[j] < 0.0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0.0:
                a[i] = 0.0
                a[j] = -diff
            if diff > 0.0:
                if a[i] > C:
                    a[i] = C
                    a[j] = C - diff
            elif a[j] > C:
                a[j] = C
                a[i] = C + diff
        else:
            curvature = QD[i] + QD[j] - 2.0 * Qi[j]
            curvature = curvature if curvature > 0.0 else TAU
            delta = (G[i] - G[j]) / curvature
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > C:
                if a[i] > C:
                    a[i] = C
                    a[j] = total - C
            elif a[j] < 0.0:
                a[j] = 0.0
                a[i] = total
            if total > C:
                if a[j] > C:
                    a[j] = C
                    a[i] = total - C
            elif a[i] < 0.0:
                a[i] = 0.0
                a[j] = total

        G += Qi * (a[i] - old_ai) + Qj * (a[j] - old_aj)

    gap = _kkt_gap(a, G, y, C)
    raise SvrConvergenceError(
        f"SVR dual solver did not reach tol={tol:g} in {max_iter} iterations (gap {gap:.3e})",
        iterations=max_iter,
        gap=gap,
    )


def _working_sets(a: np.ndarray, G: np.ndarray, y: np.ndarray,
                  C: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Indices that may move y_t a_t up, those that may move it down, and the scores -y_t G_t"""
    up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
    low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))
    return up, low, -y * G


def _kkt_gap(a: np.ndarray, G: np.ndarray, y: np.ndarray, C: float) -> float:
    up, low, score = _working_sets(a, G, y, C)
    if not up.any() or not low.any():
        return 0.0
    return float(np.max(score[up]) - np.min(score[low]))


def _free_direction(Q_free: np.ndarray, g_free: np.ndarray, y_free: np.ndarray,
                    tol: float) -> Tuple[np.ndarray, bool]:
    """
    Step of the equality-constrained subproblem on the free variables

    Minimizes 1/2 d^T Q d + g^T d subject to y^T d = 0. Returns the exact Newton
    step, or a zero-curvature descent ray (flag True) when the gradient has a
    component along a flat direction of the reduced Hessian.
    """
    Z = null_space(y_free[None, :])
    H = Z.T @ Q_free @ Z
    w, V = eigh(0.5 * (H + H.T))
    c = V.T @ (Z.T @ g_free)
    flat = w <= EIG_RTOL * max(float(w.max(initial=0.0)), 1.0)
    if np.any(np.abs(c[flat]) > RAY_FLOOR * tol):
        return -(Z @ (V[:, flat] @ c[flat])), True
    return -(Z @ (V[:, ~flat] @ (c[~flat] / w[~flat]))), False


def _released_bound(G: np.ndarray, y: np.ndarray, a: np.ndarray, C: float, fixed: np.ndarray) -> Optional[int]:
    """Bound variable with the largest multiplier violation, None when every bound multiplier is consistent"""
    up, low, score = _working_sets(a, G, y, C)
    free = ~fixed
    if free.any():
        lam = float(np.mean(score[free]))
    else:
        lam = 0.5 * (float(np.max(score[up], initial=-np.inf)) + float(np.min(score[low], initial=np.inf)))
    violation = np.where(fixed & up, score - lam, np.where(fixed & low, lam - score, -np.inf))
    t = int(np.argmax(violation))
    return t if violation[t] > 0.0 else None


def _refine_active_set(Q: np.ndarray, p: np.ndarray, y: np.ndarray, a: np.ndarray, C: float,
                       tol: float, max_steps: int) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Primal active-set method started from a feasible pairwise iterate

    Variables on a bound stay fixed while the free ones take exact subproblem
    steps; a step that reaches a bound fixes that variable, and once the free
    subproblem is solved the bound with the largest multiplier violation is
    released. Stops when the maximal violating pair is below tol.
    """
    a = np.clip(a, 0.0, C)
    fixed = (a <= 0.0) | (a >= C)
    for step in range(max_steps):
        G = Q @ a + p
        if _kkt_gap(a, G, y, C) < tol:
            return a, G, step

        free = np.flatnonzero(~fixed)
        direction, ray = np.zeros(0), False
        if free.size > 1:
            direction, ray = _free_direction(Q[np.ix_(free, free)], G[free], y[free], tol)
        if direction.size == 0 or np.max(np.abs(direction)) <= STEP_FLOOR * C:
            released = _released_bound(G, y, a, C, fixed)
            if released is None:
                break
            fixed[released] = False
            continue

        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(direction < 0.0, -a[free] / direction,
                              np.where(direction > 0.0, (C - a[free]) / direction, np.inf))
        blocking = int(np.argmin(ratios))
        alpha = float(ratios[blocking]) if ray else min(1.0, float(ratios[blocking]))
        if not np.isfinite(alpha):
            break
        a[free] = np.clip(a[free] + alpha * direction, 0.0, C)
        if ray or ratios[blocking] <= 1.0:
            t = free[blocking]
            a[t] = 0.0 if direction[blocking] < 0.0 else C
            fixed[t] = True

    G = Q @ a + p
    gap = _kkt_gap(a, G, y, C)
    raise SvrConvergenceError(
        f"SVR active-set refinement did not reach tol={tol:g} (gap {gap:.3e})",
        iterations=max_steps,
        gap=gap,
    )


def _offset(a: np.ndarray, G: np.ndarray, y: np.ndarray, box_c: float) -> float:
    """Bias from free variables, or the midpoint of the bound-derived interval when none are free"""
    yG = y * G
    at_upper = a >= box_c
    at_lower = a <= 0.0
    free = ~(at_upper | at_lower)
    if free.any():
        rho = float(np.mean(yG[free]))
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = float(np.min(yG[ub_mask])) if ub_mask.any() else np.inf
        lb = float(np.max(yG[lb_mask])) if lb_mask.any() else -np.inf
        if np.isfinite(ub) and np.isfinite(lb):
            rho = 0.5 * (ub + lb)
        else:
            rho = ub if np.isfinite(ub) else (lb if np.isfinite(lb) else 0.0)
    return -rho


def train_svr(data: Dataset, spec: KernelSpec, epsilon: float, box_c: float = DEFAULT_BOX_C,
              tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SvrModel:
    """
    Train an epsilon-SVR on the dataset

    Args:
        data: Training pairs (m >= 2)
        spec: Kernel of the model
        epsilon: Width of the insensitive tube
        box_c: Box constraint on every dual coefficient
        tol: KKT tolerance on the maximal violating pair
        max_iter: Iteration cap of the pairwise solver

    Returns:
        SvrModel keeping only points with nonzero dual coefficient
    """
    epsilon = float(epsilon)
    box_c = float(box_c)
    if epsilon < 0.0 or not np.isfinite(epsilon):
        raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
    if box_c <= 0.0 or not np.isfinite(box_c):
        raise ValueError(f"box_c must be positive, got {box_c}")
    if data.m < 2:
        raise ValueError(f"SVR training needs at least 2 points, got {data.m}")
    if spec.input_dim != data.input_dim:
        raise KernelError(f"Kernel input_dim {spec.input_dim} does not match data dimension {data.input_dim}")

    K = gram_matrix(spec, data.inputs)
    z = data.targets
    a, G, y, iterations = _solve_dual(K, z, epsilon, box_c, tol, max_iter)
    bias = _offset(a, G, y, box_c)

    m = data.m
    beta = a[:m] - a[m:]
    keep = np.abs(beta) > SV_THRESHOLD * box_c
    objective = 0.5 * float(a @ (np.block([[K, -K], [-K, K]]) @ a)) + float(
        np.concatenate([epsilon - z, epsilon + z]) @ a)
    logger.debug(
        f"✅ SVR {spec.family.value} phi={spec.phi} eps={epsilon:.4g}: "
        f"{int(keep.sum())}/{m} support vectors after {iterations} iterations"
    )
    return SvrModel(
        spec=spec,
        epsilon=epsilon,
        box_c=box_c,
        centers=data.inputs[keep].copy(),
        duals=beta[keep].copy(),
        bias=bias,
        iterations=iterations,
        dual_objective=objective,
    )


def predict_svr_many(model: SvrModel, points: Any) -> np.ndarray:
    A = as_rows(points, model.spec.input_dim)
    if model.duals.size == 0:
        return np.full(A.shape[0], model.bias)
    return cross_kernel(model.spec, A, model.centers) @ model.duals + model.bias


def predict_svr(model: SvrModel, x: Sequence[float]) -> float:
    """Prediction sum_i beta_i k(x, c_i) + bias at a single point"""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != model.spec.input_dim:
        raise KernelError(f"Test point has dimension {x.size}, model expects {model.spec.input_dim}")
    return float(predict_svr_many(model, x[None, :])[0])


def count_support_vectors(model: SvrModel) -> int:
    return int(model.duals.size)
