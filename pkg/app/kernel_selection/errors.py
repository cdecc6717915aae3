"""
Exception hierarchy for the kernel selection toolkit
Library modules raise these; the pipelines and the CLI decide how to react.
"""

from typing import Any, Optional, Sequence


class KernelSelectionError(Exception):
    """Base class for every error raised by the toolkit"""


class KernelError(KernelSelectionError, ValueError):
    """Invalid kernel specification, dimension mismatch or non-finite Gram matrix"""


class DomainError(KernelSelectionError, ValueError):
    """Invalid hyperparameter box or box construction factors"""


class FactorizationError(KernelSelectionError, RuntimeError):
    """Cholesky factorization failed even after the full jitter ladder"""

    def __init__(self, message: str, max_jitter: Optional[float] = None):
        super().__init__(message)
        self.max_jitter = max_jitter


class SvrConvergenceError(KernelSelectionError, RuntimeError):
    """The SVR dual solver hit its iteration cap before reaching KKT tolerance"""

    def __init__(self, message: str, iterations: int, gap: float):
        super().__init__(message)
        self.iterations = iterations
        self.gap = gap


class ModelPredictionError(KernelSelectionError, RuntimeError):
    """The dynamics model could not produce a prediction for the controller"""


class ObjectiveEvaluationError(KernelSelectionError, RuntimeError):
    """A black-box objective raised while evaluating a proposed point"""

    def __init__(self, message: str, kernel_index: int, phi: Sequence[float]):
        super().__init__(message)
        self.kernel_index = kernel_index
        self.phi = tuple(float(v) for v in phi)

    def point(self) -> Any:
        return self.kernel_index, self.phi


class ConfigError(KernelSelectionError, ValueError):
    """Experiment configuration file is missing, unreadable or invalid"""
