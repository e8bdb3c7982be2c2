"""Run configuration for the extrema-weighted feature toolkit."""
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Optional

import dotenv
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from error_handling import ConfigError, ParseError

logger = structlog.get_logger(__name__)

ENV_PREFIX = "XWF_"

DEFAULT_LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2)

# Fields that never influence artifact content.
NON_ANALYSIS_FIELDS = {
    "trajectories", "table", "output_dir", "log_level", "log_file", "workers",
}


class RunConfig(BaseModel):
    """Every configurable default of the pipeline, validated."""

    model_config = ConfigDict(
        str_strip_whitespace=True,
        validate_assignment=True,
        extra='forbid'
    )

    # Inputs and outputs
    trajectories: Optional[Path] = Field(None, description="Trajectory CSV path")
    table: Optional[Path] = Field(None, description="Outcome/covariate table CSV path")
    output_dir: Path = Field(Path("./xwf_output"), description="Directory for artifacts")
    seed: Optional[int] = Field(None, description="Seed for stochastic commands", ge=0)

    # Cleaning and gap filling
    apply_cleaning: bool = Field(True, description="Apply the cleaning policy on ingest")
    value_min: float = Field(10.0, description="Lowest admissible value")
    value_max: float = Field(250.0, description="Highest admissible value")
    max_gap: float = Field(300.0, description="Largest admissible gap in seconds", gt=0)
    min_duration: float = Field(1800.0, description="Shortest admissible duration in seconds", gt=0)
    target_dt: float = Field(30.0, description="Gap-fill spacing in seconds", gt=0)
    duration_covariate: bool = Field(False, description="Append duration to the covariates")

    # Marginal density
    grid_size: int = Field(1024, description="Density evaluation grid size", ge=64)
    bandwidth: Optional[float] = Field(None, description="Kernel bandwidth override", gt=0)

    # GAM
    basis_size: int = Field(8, description="B-spline basis functions per smooth", ge=4, le=40)
    penalty_order: int = Field(2, description="Difference penalty order", ge=1, le=3)
    lambda_grid: tuple[float, ...] = Field(DEFAULT_LAMBDA_GRID, description="Smoothing grid")
    max_iterations: int = Field(100, description="PIRLS iteration cap", ge=1)
    tolerance: float = Field(1e-8, description="PIRLS relative tolerance", gt=0)

    # Weight search and inference
    levels: int = Field(3, description="Grid-search refinement levels L", ge=1, le=8)
    replicates: int = Field(99, description="Permutation replicates R", ge=19)
    refit_weights: bool = Field(True, description="Re-run the weight search per replicate")
    retries: int = Field(3, description="Retries for a failed replicate", ge=0, le=10)

    # Baselines
    n_components: int = Field(3, description="Supervised principal components k", ge=1)
    common_dt: Optional[float] = Field(None, description="Spectrum resampling spacing (auto if unset)", gt=0)
    max_bins: int = Field(1000, description="Spectrum truncation in bins", ge=4)
    log_spectrum: bool = Field(True, description="Apply log(1 + power) before PCA")
    screening_z: float = Field(1.96, description="Nominal screening threshold", gt=0)

    # Prediction study
    n_pos_test: int = Field(100, description="Positive cases per test split", ge=0)
    n_neg_test: int = Field(900, description="Negative cases per test split", ge=0)
    n_splits: int = Field(10, description="Repeated random splits", ge=1)

    # Simulation
    n_subjects: int = Field(1000, description="Simulated subjects n", ge=10)
    n_samples: int = Field(500, description="Samples per simulated subject", ge=8)
    n_covariates: int = Field(2, description="Simulated covariates q", ge=0)
    latents: bool = Field(False, description="Export latent simulation variables")

    # Execution and logging
    workers: int = Field(1, description="Worker-pool budget", ge=1, le=256)
    log_level: str = Field("INFO", description="Logging level")
    log_file: Optional[str] = Field(None, description="Log file path")

    @field_validator('lambda_grid', mode='before')
    @classmethod
    def parse_lambda_grid(cls, v: Any) -> Any:
        """Accept comma-separated strings from files and the environment."""
        if isinstance(v, str):
            v = [item for item in v.replace(" ", "").split(",") if item]
        return v

    @field_validator('lambda_grid')
    @classmethod
    def validate_lambda_grid(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if not v:
            raise ValueError("lambda_grid must not be empty")
        if any(lam <= 0 for lam in v):
            raise ValueError("lambda_grid values must be positive")
        return tuple(sorted(v))

    @field_validator('log_level')
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        """Validate log level."""
        valid_levels = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}
        v_upper = v.upper()
        if v_upper not in valid_levels:
            raise ValueError(f"Invalid log level: {v}. Must be one of {valid_levels}")
        return v_upper

    @field_validator('log_file')
    @classmethod
    def validate_log_file(cls, v: Optional[str]) -> Optional[str]:
        """Validate log file path."""
        if v is None:
            return v

        path = Path(v)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            if not os.access(path.parent, os.W_OK):
                raise ValueError(f"No write permission for log directory: {path.parent}")
        except (PermissionError, OSError) as e:
            raise ValueError(f"Invalid log file path {path}: {e}")

        return str(path.resolve())

    @model_validator(mode='after')
    def validate_bounds(self) -> 'RunConfig':
        if self.value_min >= self.value_max:
            raise ValueError(f"value_min ({self.value_min}) must be below value_max ({self.value_max})")
        return self

    def validate_run_config(self) -> list[str]:
        """Return advisory warnings about the configuration."""
        issues = []

        if self.replicates < 99:
            issues.append(f"Only {self.replicates} permutation replicates - p-values are coarse")
        if self.common_dt is None:
            issues.append("common_dt not set - spectrum spacing is inferred from the data")
        if self.n_pos_test + self.n_neg_test == 0:
            issues.append("Empty test splits requested - prediction study has nothing to score")
        if not self.refit_weights:
            issues.append("Weights frozen across replicates - weight-estimation uncertainty ignored")

        return issues

    def require_seed(self, command: str) -> int:
        if self.seed is None:
            raise ConfigError(f"Command '{command}' is stochastic and needs a seed", command=command)
        return self.seed

    def require_inputs(self) -> tuple[Path, Path]:
        if self.trajectories is None or self.table is None:
            raise ConfigError("Both trajectories and table paths are required")
        return self.trajectories, self.table

    def config_hash(self) -> str:
        """Stable hash of the analysis settings."""
        data = self.model_dump(mode="json", exclude=NON_ANALYSIS_FIELDS)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

    def cleaning_policy(self):
        from funcdata import CleaningPolicy
        return CleaningPolicy(
            value_min=self.value_min,
            value_max=self.value_max,
            max_gap=self.max_gap,
            min_duration=self.min_duration,
        )

    def gam_spec(self):
        from gam import GamSpec
        return GamSpec(
            basis_size=self.basis_size,
            penalty_order=self.penalty_order,
            lambda_grid=self.lambda_grid,
            max_iterations=self.max_iterations,
            tolerance=self.tolerance,
        )

    def freq_sim_config(self):
        from simulate import FreqSimConfig
        return FreqSimConfig(
            n=self.n_subjects, n_i=self.n_samples, q=self.n_covariates,
            seed=self.require_seed("simulate-freq"),
        )

    def ar_sim_config(self):
        from simulate import ArSimConfig
        return ArSimConfig(
            n=self.n_subjects, n_i=self.n_samples, q=self.n_covariates,
            seed=self.require_seed("simulate-ar"),
        )

    @classmethod
    def resolve(cls, config_file: Optional[str] = None, env_file: Optional[str] = None,
                overrides: Optional[dict] = None) -> 'RunConfig':
        """Layer defaults, environment, config file and CLI overrides (highest wins)."""
        if env_file:
            dotenv.load_dotenv(env_file)
        else:
            dotenv.load_dotenv()

        data: dict[str, Any] = {}
        data.update(cls._extract_env_vars())
        if config_file:
            data.update(cls._read_config_file(config_file))
        if overrides:
            data.update({k: v for k, v in overrides.items() if v is not None})

        config = cls(**data)
        for issue in config.validate_run_config():
            logger.warning("Configuration warning", issue=issue)
        return config

    @classmethod
    def _extract_env_vars(cls) -> dict:
        """Collect XWF_<FIELD> environment variables."""
        config_data = {}
        for field_name in cls.model_fields:
            value = os.getenv(f"{ENV_PREFIX}{field_name.upper()}")
            if value is not None and value.strip():
                config_data[field_name] = value.strip()
        return config_data

    @classmethod
    def _read_config_file(cls, path: str) -> dict:
        """Parse a flat ``key = value`` file; ``#`` starts a comment."""
        config_data = {}
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e}", path=str(path)) from e

        for lineno, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'key = value'", path=str(path), line=lineno)
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in cls.model_fields:
                raise ParseError(f"{path}:{lineno}: unknown setting '{key}'", path=str(path), line=lineno)
            config_data[key] = value
        return config_data

    def to_file_text(self, keys: Optional[list[str]] = None) -> str:
        """Render settings back into the flat config-file format."""
        data = self.model_dump(mode="json")
        lines = []
        for key in keys or list(data):
            value = data[key]
            if value is None:
                continue
            if isinstance(value, list):
                value = ",".join(repr(float(v)) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")
