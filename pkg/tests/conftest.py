import os

import numpy as np
import pytest
import scipy.linalg

# Keep the suite independent of a developer's LOD_* environment
for _name in [name for name in os.environ if name.upper().startswith("LOD_")]:
    os.environ.pop(_name)

from hmm_lod.config import Settings  # noqa: E402
from hmm_lod.core.coefficient import make_coefficient  # noqa: E402
from hmm_lod.core.decomposition import build_projection_kit  # noqa: E402
from hmm_lod.core.fem import assemble_load, assemble_stiffness  # noqa: E402
from hmm_lod.core.mesh import build_two_level  # noqa: E402


def pytest_configure(config):  # type: ignore
    """Register the markers used across the suite."""
    config.addinivalue_line("markers", "asyncio: mark the test as running with asyncio")
    config.addinivalue_line("markers", "slow: multi-level sweeps")


class Setup:
    """Mesh, coefficient and assembled operators of one small problem."""

    def __init__(self, dimension, n, r, kind="constant", params=None, seed=0, f=1.0):
        self.mesh = build_two_level(dimension, n, r)
        self.coeff = make_coefficient(self.mesh, kind, params, seed=seed)
        self.A = assemble_stiffness(self.mesh, self.coeff)
        self.b = assemble_load(self.mesh, lambda x: np.full(len(x), f))
        self.kit = build_projection_kit(self.mesh)

    @property
    def A_dense(self):
        return self.A.toarray()

    @property
    def C_dense(self):
        return self.kit.C.toarray()


@pytest.fixture
def make_setup():
    """Factory for small assembled problems."""
    return Setup


@pytest.fixture
def checkerboard_1d():
    return Setup(1, 4, 2, "checkerboard", {"epsilon": 1 / 8, "contrast": 100}, seed=1)


@pytest.fixture
def checkerboard_2d():
    return Setup(2, 4, 2, "checkerboard", {"epsilon": 1 / 8, "contrast": 100}, seed=42)


@pytest.fixture
def test_settings():
    return Settings(_env_file=None)


def null_space_minimizer(A, C, rhs, target=None):
    """
    Dense oracle for min 1/2 v^T A v - rhs^T v subject to C v = target:
    particular solution plus an SPD solve on an explicit basis of ker C.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    if target is None:
        target = np.zeros(C.shape[0])
    particular = np.linalg.lstsq(C, target, rcond=None)[0]
    Z = scipy.linalg.null_space(C)
    reduced = Z.T @ A @ Z
    y = scipy.linalg.solve(reduced, Z.T @ (rhs - A @ particular), assume_a="pos")
    return particular + Z @ y


@pytest.fixture
def null_space_oracle():
    return null_space_minimizer
