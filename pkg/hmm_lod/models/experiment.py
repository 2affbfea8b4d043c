from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from hmm_lod.config import Settings
from hmm_lod.core.coefficient import CoefficientKind


class StudyKind(str, Enum):
    CONVERGENCE = "convergence"
    LOCALIZATION = "localization"
    DECAY = "decay"
    IDENTITIES = "identities"


class KPolicyKind(str, Enum):
    """How the patch level k is chosen for a coarse mesh size."""

    FIXED = "fixed"
    LOG = "log"  # ceil(log2 n) + offset
    SATURATED = "saturated"
    GLOBAL = "global"


class ForcingKind(str, Enum):
    CONSTANT = "constant"
    SINE = "sine"  # prod_i sin(pi x_i)


class CoefficientSpec(BaseModel):
    kind: CoefficientKind = Field(
        CoefficientKind.CONSTANT, description="Coefficient family."
    )
    epsilon: Optional[float] = Field(
        None, description="Microscale of periodic and checkerboard fields."
    )
    contrast: Optional[float] = Field(
        None, description="beta/alpha of the checkerboard field."
    )
    value: float = Field(1.0, description="Value of the constant field.")
    seed: int = Field(0, description="Seed of the checkerboard draw.")

    @field_validator("epsilon", "contrast")
    @classmethod
    def validate_positive(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not v > 0:
            raise ValueError(f"must be positive, got {v}")
        return v

    @model_validator(mode="after")
    def validate_family(self) -> "CoefficientSpec":
        if self.kind == CoefficientKind.CHECKERBOARD and self.contrast is None:
            raise ValueError("checkerboard coefficients need a contrast")
        if self.kind == CoefficientKind.CHECKERBOARD and self.contrast < 1:
            raise ValueError(f"checkerboard contrast must be >= 1, got {self.contrast}")
        return self

    def params(self, epsilon: Optional[float] = None) -> Dict[str, Any]:
        """Parameters for make_coefficient, with an optional epsilon override."""
        if self.kind == CoefficientKind.CONSTANT:
            return {"value": self.value}
        params: Dict[str, Any] = {"epsilon": epsilon if epsilon is not None else self.epsilon}
        if self.kind == CoefficientKind.CHECKERBOARD:
            params["contrast"] = self.contrast
        return params


class KPolicy(BaseModel):
    kind: KPolicyKind = KPolicyKind.LOG
    k: Optional[int] = Field(None, description="Patch level for the fixed policy.")
    offset: int = Field(1, description="Offset added to ceil(log2 n).")

    @model_validator(mode="after")
    def validate_level(self) -> "KPolicy":
        if self.kind == KPolicyKind.FIXED and (self.k is None or self.k < 1):
            raise ValueError(f"a fixed k policy needs k >= 1, got {self.k}")
        return self


class ForcingSpec(BaseModel):
    kind: ForcingKind = ForcingKind.CONSTANT
    value: float = Field(1.0, description="Amplitude of the right-hand side.")


class ExperimentConfig(BaseModel):
    """One study run; every swept value is validated before any solve starts."""

    study: StudyKind
    dimension: int = 1
    n_values: List[int] = Field(default_factory=lambda: [4, 8, 16])
    r: Optional[int] = Field(
        None, description="Refinement exponent; defaults to settings.default_refinement."
    )
    coefficient: CoefficientSpec = Field(default_factory=CoefficientSpec)
    eps_values: Optional[List[float]] = Field(
        None, description="Sweep of coefficient microscales at each n."
    )
    k_policy: KPolicy = Field(default_factory=KPolicy)
    forcing: ForcingSpec = Field(default_factory=ForcingSpec)
    out: Optional[Path] = None

    sample_nodes: int = Field(5, description="Nodes sampled by decay/localization.")
    orthogonality_samples: int = Field(
        20, description="Random V_f vectors in the a-orthogonality check."
    )

    # Tolerance overrides
    kkt_tolerance: Optional[float] = None
    solve_tolerance: Optional[float] = None
    identity_tolerance: Optional[float] = None

    # Expectations turned into recorded failures when not met
    expect_rate: Optional[float] = None
    expect_decay: Optional[float] = None
    expect_ratio: Optional[float] = None

    threads: Optional[int] = None
    record_wall_time: Optional[bool] = None

    @field_validator("dimension")
    @classmethod
    def validate_dimension(cls, v: int) -> int:
        if v not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {v}")
        return v

    @field_validator("n_values")
    @classmethod
    def validate_n_values(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("n_values must not be empty")
        if any(n < 2 for n in v):
            raise ValueError(f"every n must be >= 2, got {v}")
        if len(set(v)) != len(v):
            raise ValueError(f"n_values contains duplicates: {v}")
        return sorted(v)

    @field_validator("r", "threads", "sample_nodes", "orthogonality_samples")
    @classmethod
    def validate_positive_int(cls, v: Optional[int]) -> Optional[int]:
        if v is not None and v < 1:
            raise ValueError(f"value must be >= 1, got {v}")
        return v

    @field_validator(
        "kkt_tolerance",
        "solve_tolerance",
        "identity_tolerance",
        "expect_ratio",
    )
    @classmethod
    def validate_positive_float(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not v > 0:
            raise ValueError(f"value must be positive, got {v}")
        return v

    @field_validator("eps_values")
    @classmethod
    def validate_eps_values(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is None:
            return v
        if not v or any(not e > 0 for e in v):
            raise ValueError(f"eps_values must be a non-empty list of positives, got {v}")
        return v

    @model_validator(mode="after")
    def validate_sweep(self) -> "ExperimentConfig":
        needs_epsilon = self.coefficient.kind != CoefficientKind.CONSTANT
        if needs_epsilon and self.coefficient.epsilon is None and not self.eps_values:
            raise ValueError(
                f"{self.coefficient.kind.value} coefficients need epsilon or eps_values"
            )
        if self.eps_values and not needs_epsilon:
            raise ValueError("eps_values only apply to periodic or checkerboard fields")
        # identities hold exactly only for unlocalized correctors
        if self.study == StudyKind.IDENTITIES and "k_policy" not in self.model_fields_set:
            self.k_policy = KPolicy(kind=KPolicyKind.GLOBAL)
        return self

    def epsilons(self) -> List[Optional[float]]:
        """Microscales swept at each n (a single None for constant fields)."""
        if self.eps_values:
            return list(self.eps_values)
        return [self.coefficient.epsilon]

    def refinement(self, settings_obj: Settings) -> int:
        return self.r if self.r is not None else settings_obj.default_refinement

    def effective_settings(self, base: Settings) -> Settings:
        """Settings with this config's overrides applied."""
        updates: Dict[str, Any] = {
            name: getattr(self, name)
            for name in (
                "kkt_tolerance",
                "solve_tolerance",
                "identity_tolerance",
                "threads",
                "record_wall_time",
            )
            if getattr(self, name) is not None
        }
        return base.model_copy(update=updates)
