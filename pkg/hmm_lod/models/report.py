from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, Field

from hmm_lod.models.experiment import StudyKind

# Column order of the CSV report; the header is part of the output contract.
CSV_COLUMNS: Tuple[str, ...] = (
    "study",
    "d",
    "n",
    "r",
    "k",
    "coeff",
    "eps",
    "contrast",
    "seed",
    "energy_err",
    "l2_err",
    "remainder_norm",
    "rate",
    "decay_c",
    "wall_ms",
)


class ReportRow(BaseModel):
    study: StudyKind
    d: int
    n: int
    r: int
    k: Optional[int] = Field(None, description="Patch level; None for global correctors.")
    coeff: str
    eps: Optional[float] = None
    contrast: Optional[float] = None
    seed: Optional[int] = None
    energy_err: Optional[float] = None
    l2_err: Optional[float] = None
    remainder_norm: Optional[float] = None
    rate: Optional[float] = None
    decay_c: Optional[float] = None
    wall_ms: float = 0.0

    node: Optional[int] = Field(None, description="Coarse node of per-node rows.")
    extras: Dict[str, float] = Field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class DecayProfile(BaseModel):
    n: int
    node: int
    coords: List[float]
    layers: List[int]
    tails: List[float]


class ExperimentReport(BaseModel):
    study: StudyKind
    rows: List[ReportRow] = Field(default_factory=list)
    metadata: Dict[str, Any] = Field(default_factory=dict)
    failures: List[str] = Field(default_factory=list)
    profiles: List[DecayProfile] = Field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures
