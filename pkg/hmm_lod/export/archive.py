"""Numerical archives: sparse operators, coefficient vectors, solutions, decay profiles."""

import csv
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from hmm_lod.core.coefficient import (
    CoefficientField,
    CoefficientKind,
    coefficient_from_values,
)
from hmm_lod.core.fem import Operator, as_matrix
from hmm_lod.core.mesh import TwoLevelMesh
from hmm_lod.models import DecayProfile

logger = logging.getLogger(__name__)


def export_coo(operator: Operator, path: Path) -> None:
    """
    Write a sparse operator as .npz (scipy native) or as row,col,value CSV triplets.
    """
    path = Path(path)
    matrix = sp.coo_matrix(as_matrix(operator))
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".npz":
        sp.save_npz(path, matrix.tocsr())
    else:
        order = np.lexsort((matrix.col, matrix.row))
        np.savetxt(
            path,
            np.column_stack(
                [matrix.row[order], matrix.col[order], matrix.data[order]]
            ),
            fmt=["%d", "%d", "%.17g"],
            delimiter=",",
            header=f"row,col,value  # shape {matrix.shape[0]}x{matrix.shape[1]}",
        )
    logger.debug(f"Exported {matrix.shape} operator with {matrix.nnz} entries to {path}")


def save_coefficient(coeff: CoefficientField, path: Path) -> None:
    """Per-fine-element values as .npy (binary) or one value per line (.csv/.txt)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".npy":
        np.save(path, np.asarray(coeff.values))
    else:
        np.savetxt(path, coeff.values, fmt="%.17g")


def load_coefficient(
    mesh: TwoLevelMesh,
    path: Path,
    kind: CoefficientKind | str = CoefficientKind.CONSTANT,
) -> CoefficientField:
    """
    Read archived element values back into a field on `mesh`.

    Raises:
        CoefficientError: if the length does not match or a value is not positive
    """
    path = Path(path)
    if path.suffix == ".npy":
        values = np.load(path)
    else:
        values = np.loadtxt(path, ndmin=1)
    return coefficient_from_values(mesh, values, kind)


def export_solution(mesh: TwoLevelMesh, u: np.ndarray, path: Path) -> None:
    """Fine nodal values with coordinates, boundary zeros included."""
    u = np.asarray(u, dtype=float)
    if u.shape != (mesh.num_fine_free,):
        raise ValueError(f"expected {mesh.num_fine_free} interior values, got {u.shape}")
    full = np.zeros(len(mesh.fine_grid))
    full[mesh.fine_free] = u
    axes = ["x", "y"][: mesh.dimension]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow([*axes, "value"])
        for coords, value in zip(mesh.fine_coords, full):
            writer.writerow([*(repr(float(c)) for c in coords), repr(float(value))])


def write_decay_profiles(profiles: Sequence[DecayProfile], path: Path) -> None:
    """One (n, node, coordinates, layer, tail) line per layer of every profile."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["n", "node", "x", "y", "layer", "tail_norm"])
        for profile in profiles:
            # 1D profiles leave the y column empty
            coords = [repr(c) for c in profile.coords] + [""] * (2 - len(profile.coords))
            for layer, tail in zip(profile.layers, profile.tails):
                writer.writerow([profile.n, profile.node, *coords, layer, repr(tail)])
    logger.info(f"Wrote {len(profiles)} decay profiles to {path}")
