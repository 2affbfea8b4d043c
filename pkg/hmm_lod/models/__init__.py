from .experiment import (
    CoefficientSpec,
    ExperimentConfig,
    ForcingKind,
    ForcingSpec,
    KPolicy,
    KPolicyKind,
    StudyKind,
)
from .report import CSV_COLUMNS, DecayProfile, ExperimentReport, ReportRow

__all__ = [
    "CSV_COLUMNS",
    "CoefficientSpec",
    "DecayProfile",
    "ExperimentConfig",
    "ExperimentReport",
    "ForcingKind",
    "ForcingSpec",
    "KPolicy",
    "KPolicyKind",
    "ReportRow",
    "StudyKind",
]
