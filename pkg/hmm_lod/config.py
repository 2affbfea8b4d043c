"""Configuration settings for hmm-lod."""

from enum import Enum

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings


class OutputFormat(str, Enum):
    """Report serialization format."""

    CSV = "csv"
    JSON = "json"


class LogLevel(str, Enum):
    """Logging level accepted by the CLI and the environment."""

    DEBUG = "DEBUG"
    INFO = "INFO"
    WARNING = "WARNING"
    ERROR = "ERROR"


class Settings(BaseSettings):  # type: ignore[misc]
    """Solver and harness settings loaded from environment variables or .env files."""

    # Parallelism
    threads: int = Field(
        default=1, description="Worker threads for study rows and corrector solves"
    )

    # Tolerances
    kkt_tolerance: float = Field(
        default=1e-10, description="Relative KKT residual tolerance for saddle solves"
    )
    solve_tolerance: float = Field(
        default=1e-12, description="Relative backward error for SPD direct solves"
    )
    identity_tolerance: float = Field(
        default=1e-8, description="Tolerance for the discrete identity checks"
    )
    max_refinements: int = Field(
        default=3, description="Iterative-refinement attempts after a direct solve"
    )

    # Discretization defaults
    default_refinement: int = Field(
        default=3, description="Fine refinement exponent r (h_f = h * 2**-r)"
    )

    # Reporting
    record_wall_time: bool = Field(
        default=False,
        description="Write measured wall time into reports (breaks byte-reproducibility)",
    )
    output_format: OutputFormat = Field(
        default=OutputFormat.CSV, description="Report format: csv or json"
    )
    log_level: LogLevel = Field(default=LogLevel.INFO, description="Logging level")

    @field_validator("kkt_tolerance", "solve_tolerance", "identity_tolerance")
    @classmethod
    def validate_tolerance(cls, v: float) -> float:
        if not v > 0:
            raise ValueError(f"tolerances must be positive, got {v}")
        return v

    @field_validator("threads", "max_refinements", "default_refinement")
    @classmethod
    def validate_positive_int(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"value must be >= 1, got {v}")
        return v

    model_config = {
        # ↳ Load from .env files and environment variables
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "env_prefix": "LOD_",
        "extra": "ignore",
    }


# Global settings instance
settings = Settings()
