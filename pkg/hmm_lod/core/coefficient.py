"""Rough coefficient fields, piecewise constant on fine elements."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np

from hmm_lod.core.errors import CoefficientError
from hmm_lod.core.mesh import TwoLevelMesh

logger = logging.getLogger(__name__)

# Bounds of 2 + sin(.)
PERIODIC_BOUNDS = (1.0, 3.0)


class CoefficientKind(str, Enum):
    """Coefficient families available to the harness."""

    CONSTANT = "constant"
    PERIODIC = "periodic"
    CHECKERBOARD = "checkerboard"


class UnderResolvedCoefficientWarning(UserWarning):
    """The coefficient varies on a scale finer than the fine mesh."""


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """One conductivity value per fine element, with bounds alpha <= a <= beta."""

    values: np.ndarray
    alpha: float
    beta: float
    kind: CoefficientKind
    params: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    under_resolved: bool = False

    @property
    def contrast(self) -> float:
        return self.beta / self.alpha

    @property
    def tag(self) -> str:
        """Short descriptor used in report rows."""
        return self.kind.value

    def scaled(self, factor: float) -> "CoefficientField":
        """Same field multiplied by a positive factor."""
        if not factor > 0:
            raise CoefficientError(f"scale factor must be positive, got {factor}")
        values = self.values * factor
        values.setflags(write=False)
        return CoefficientField(
            values=values,
            alpha=self.alpha * factor,
            beta=self.beta * factor,
            kind=self.kind,
            params={**self.params, "scale": factor},
            seed=self.seed,
            under_resolved=self.under_resolved,
        )


def element_barycenters(mesh: TwoLevelMesh) -> np.ndarray:
    """Barycenters of the fine elements, shape (elements, d)."""
    return mesh.fine_coords[mesh.fine_elements].mean(axis=1)


def _require_epsilon(params: Dict[str, Any], kind: CoefficientKind) -> float:
    epsilon = params.get("epsilon")
    if epsilon is None or not float(epsilon) > 0:
        raise CoefficientError(f"{kind.value} coefficient needs epsilon > 0, got {epsilon}")
    return float(epsilon)


def _checkerboard(
    barycenters: np.ndarray, epsilon: float, contrast: float, seed: int
) -> np.ndarray:
    dimension = barycenters.shape[1]
    cells_per_axis = math.ceil(1.0 / epsilon - 1e-12)
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, 2, size=(cells_per_axis,) * dimension)
    cell = np.minimum(
        np.floor(barycenters / epsilon).astype(np.int64), cells_per_axis - 1
    )
    high = draws[tuple(cell.T)].astype(bool)
    return np.where(high, contrast, 1.0)


def make_coefficient(
    mesh: TwoLevelMesh,
    kind: CoefficientKind | str,
    params: Optional[Dict[str, Any]] = None,
    seed: int = 0,
) -> CoefficientField:
    """
    Sample a coefficient family at the fine-element barycenters.

    Args:
        mesh: two-level mesh whose fine elements carry the values
        kind: constant (params: value), periodic (params: epsilon),
            checkerboard (params: epsilon, contrast)
        params: family parameters
        seed: seed for the checkerboard draw; ignored by the other families

    Returns:
        CoefficientField with `under_resolved` set when epsilon < h_f

    Raises:
        CoefficientError: on missing or non-positive parameters
    """
    kind = CoefficientKind(kind)
    params = dict(params or {})
    barycenters = element_barycenters(mesh)
    under_resolved = False

    if kind == CoefficientKind.CONSTANT:
        value = float(params.get("value", 1.0))
        if not value > 0:
            raise CoefficientError(f"constant coefficient must be positive, got {value}")
        values = np.full(len(mesh.fine_elements), value)
        alpha = beta = value
        params["value"] = value
    elif kind == CoefficientKind.PERIODIC:
        epsilon = _require_epsilon(params, kind)
        values = 2.0 + np.sin(2.0 * np.pi * barycenters[:, 0] / epsilon)
        alpha, beta = PERIODIC_BOUNDS
        under_resolved = epsilon < mesh.h_fine
    else:
        epsilon = _require_epsilon(params, kind)
        contrast = params.get("contrast")
        if contrast is None or not float(contrast) > 0:
            raise CoefficientError(
                f"checkerboard contrast must be positive, got {contrast}"
            )
        contrast = float(contrast)
        if contrast < 1.0:
            raise CoefficientError(
                f"checkerboard contrast beta/alpha must be >= 1, got {contrast}"
            )
        values = _checkerboard(barycenters, epsilon, contrast, seed)
        alpha, beta = 1.0, contrast
        params["contrast"] = contrast
        under_resolved = epsilon < mesh.h_fine

    if under_resolved:
        warnings.warn(
            f"Coefficient scale epsilon={params.get('epsilon')} is below the fine "
            f"mesh size h_f={mesh.h_fine}; the field is under-resolved.",
            UnderResolvedCoefficientWarning,
            stacklevel=2,
        )

    values = np.asarray(values, dtype=float)
    values.setflags(write=False)
    logger.debug(
        f"Sampled {kind.value} coefficient on {len(values)} fine elements "
        f"(min={values.min():.3g}, max={values.max():.3g})"
    )
    return CoefficientField(
        values=values,
        alpha=float(alpha),
        beta=float(beta),
        kind=kind,
        params=params,
        seed=seed if kind == CoefficientKind.CHECKERBOARD else None,
        under_resolved=under_resolved,
    )


def coefficient_from_values(
    mesh: TwoLevelMesh, values: np.ndarray, kind: CoefficientKind | str = "constant"
) -> CoefficientField:
    """Wrap archived per-element values into a field, re-deriving the bounds."""
    values = np.asarray(values, dtype=float).copy()
    if values.shape != (len(mesh.fine_elements),):
        raise CoefficientError(
            f"expected {len(mesh.fine_elements)} element values, got {values.shape}"
        )
    if not (values > 0).all():
        raise CoefficientError("coefficient values must be strictly positive")
    values.setflags(write=False)
    return CoefficientField(
        values=values,
        alpha=float(values.min()),
        beta=float(values.max()),
        kind=CoefficientKind(kind),
    )
