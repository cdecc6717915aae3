"""
Experiment Configuration
Validated JSON experiment files (pydantic) and environment-driven runtime settings.
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .bo import AcquisitionKind, SearchSpace
from .errors import ConfigError
from .gp import Dataset
from .kernels import HyperparameterDomain, KernelFamily, default_domain
from .plant import CostKind, make_training_data
from .selection import ClosedLoopTask, ModelKind, ModelSettings, build_space

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class PlantConfig(_Section):
    x0: float = 3.0
    horizon: int = Field(10, ge=1)
    guard: float = Field(1e3, gt=0.0)
    cost: CostKind = CostKind.TIME_WEIGHTED_QUADRATIC_STATE
    initial_states: Optional[List[float]] = None


class DatasetConfig(_Section):
    n_points: int = Field(11, ge=2)
    low: float = -10.0
    high: float = 10.0

    @model_validator(mode="after")
    def _ordered(self):
        if self.low >= self.high:
            raise ValueError(f"dataset.low ({self.low}) must be below dataset.high ({self.high})")
        return self


class BoundsConfig(_Section):
    lower: List[float]
    upper: List[float]
    log_scale: bool = True

    @model_validator(mode="after")
    def _consistent(self):
        if len(self.lower) != len(self.upper):
            raise ValueError(f"bounds have {len(self.lower)} lower and {len(self.upper)} upper entries")
        if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
            raise ValueError(f"bounds need lower <= upper, got {self.lower} and {self.upper}")
        if self.log_scale and any(lo <= 0.0 for lo in self.lower):
            raise ValueError(f"log-scaled bounds need positive lower entries, got {self.lower}")
        return self

    def to_domain(self) -> HyperparameterDomain:
        return HyperparameterDomain(tuple(self.lower), tuple(self.upper), (self.log_scale,) * len(self.lower))


class SearchSpaceConfig(_Section):
    kernels: List[KernelFamily] = Field(
        default_factory=lambda: [KernelFamily.LINEAR, KernelFamily.POLYNOMIAL_CUBIC, KernelFamily.GAUSSIAN],
        min_length=1,
    )
    model: ModelKind = ModelKind.SVR
    box_c: float = Field(10.0, gt=0.0)
    svr_tol: float = Field(1e-4, gt=0.0)
    # Families without an entry use their default box
    bounds: Dict[KernelFamily, BoundsConfig] = Field(default_factory=dict)
    extra: Optional[BoundsConfig] = None

    def build(self) -> SearchSpace:
        domains = [self.bounds[f].to_domain() if f in self.bounds else default_domain(f) for f in self.kernels]
        extra = self.extra.to_domain() if self.extra is not None else None
        return build_space(self.kernels, self.model, domains, extra)


class BoConfig(_Section):
    acquisition: AcquisitionKind = AcquisitionKind.EI_PLUS
    data_budget: int = Field(30, ge=1)
    closed_loop_budget: int = Field(50, ge=1)


class CrossValidationConfig(_Section):
    folds: int = Field(5, ge=2)


class StudyConfig(_Section):
    reps: int = Field(20, ge=1)
    data_based_at: bool = True
    at_max_transitions: int = Field(500, ge=1)
    workers: Optional[int] = Field(None, ge=1)


class VerifyConfig(_Section):
    draws: int = Field(200, ge=0)
    demo_iterations: int = Field(30, ge=1)
    corollary_data_budget: int = Field(5, ge=1)
    corollary_budget: int = Field(5, ge=1)


class ExperimentConfig(_Section):
    """Root of an experiment file; every section has defaults reproducing the simulation study"""
    seed: int = Field(0, ge=0)
    plant: PlantConfig = PlantConfig()
    dataset: DatasetConfig = DatasetConfig()
    search_space: SearchSpaceConfig = SearchSpaceConfig()
    bo: BoConfig = BoConfig()
    cross_validation: CrossValidationConfig = CrossValidationConfig()
    study: StudyConfig = StudyConfig()
    verify: VerifyConfig = VerifyConfig()
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def _folds_fit_dataset(self):
        if self.cross_validation.folds > self.dataset.n_points:
            raise ValueError(f"cross_validation.folds ({self.cross_validation.folds}) exceeds "
                             f"dataset.n_points ({self.dataset.n_points})")
        return self

    def training_data(self) -> Dataset:
        return make_training_data(self.dataset.n_points, self.dataset.low, self.dataset.high)

    def space(self) -> SearchSpace:
        return self.search_space.build()

    def task(self) -> ClosedLoopTask:
        states: Optional[Tuple[float, ...]] = tuple(self.plant.initial_states) if self.plant.initial_states else None
        return ClosedLoopTask(self.plant.x0, self.plant.horizon, self.plant.guard, self.plant.cost, states)

    def model_settings(self) -> ModelSettings:
        return ModelSettings(kind=self.search_space.model, box_c=self.search_space.box_c,
                             tol=self.search_space.svr_tol)

    def config_hash(self) -> str:
        """sha256 over the canonical JSON of the validated config"""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class RuntimeSettings(BaseSettings):
    """Process-level knobs read from KSEL_* environment variables or .env"""
    model_config = SettingsConfigDict(env_prefix="KSEL_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    output_dir: str = "results"
    workers: int = Field(1, ge=1)


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    """Read and validate an experiment file; the defaults when no path is given"""
    if path is None:
        return ExperimentConfig()
    config_path = Path(path)
    try:
        text = config_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"Cannot read config {config_path}: {exc}") from exc
    try:
        config = ExperimentConfig.model_validate_json(text)
    except ValidationError as exc:
        raise ConfigError(f"Invalid config {config_path}:\n{exc}") from exc
    logger.info(f"✅ Loaded config {config_path} (hash {config.config_hash()[:12]})")
    return config


def config_schema() -> dict:
    return ExperimentConfig.model_json_schema()
