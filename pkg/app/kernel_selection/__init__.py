"""
Closed-Loop Kernel Selection
Chooses the kernel and hyperparameters of a learned dynamics model by Bayesian
optimization of the closed-loop control cost.
"""

from .bo import AcquisitionKind, BoState, SearchSpace, run_bo
from .gp import Dataset
from .kernels import HyperparameterDomain, KernelFamily, KernelSpec
from .plant import CostSpec, ModelHandle, evaluate_cost, rollout
from .reporting import PACKAGE_VERSION as __version__
from .selection import (ClosedLoopTask, SelectionResult, closed_loop_selection, data_based_selection,
                        repeated_study)

__all__ = [
    'AcquisitionKind',
    'BoState',
    'ClosedLoopTask',
    'CostSpec',
    'Dataset',
    'HyperparameterDomain',
    'KernelFamily',
    'KernelSpec',
    'ModelHandle',
    'SearchSpace',
    'SelectionResult',
    'closed_loop_selection',
    'data_based_selection',
    'evaluate_cost',
    'repeated_study',
    'rollout',
    'run_bo',
]
