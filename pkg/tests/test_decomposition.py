"""Tests for P0, the constrained minimizer and the reconstruction operators."""

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from hmm_lod.config import Settings
from hmm_lod.core.decomposition import (
    SaddleSystem,
    apply_P0,
    build_projection_kit,
    macro_energy,
    multiplier_projection,
    reconstruct,
    solve_constrained,
)
from hmm_lod.core.errors import ConstraintRankError, KKTResidualError
from hmm_lod.core.fem import energy
from hmm_lod.core.mesh import build_two_level


class TestProjection:
    """P0 as the L2 projection onto the coarse space."""

    def test_coarse_mass_is_galerkin_product(self, checkerboard_2d):
        kit = checkerboard_2d.kit
        product = (kit.P.matrix.T @ kit.M_f.matrix @ kit.P.matrix).toarray()
        np.testing.assert_allclose(product, kit.M_H.toarray(), atol=1e-15)

    @pytest.mark.parametrize("dimension", [1, 2])
    def test_identity_on_coarse_space(self, dimension):
        mesh = build_two_level(dimension, 4, 2)
        kit = build_projection_kit(mesh)
        w_h = np.random.default_rng(3).standard_normal(mesh.num_coarse_free)
        np.testing.assert_allclose(apply_P0(kit, kit.P @ w_h), w_h, atol=1e-12)

    def test_kernel_maps_to_zero(self, checkerboard_1d):
        kernel = scipy.linalg.null_space(checkerboard_1d.C_dense)
        v = kernel @ np.random.default_rng(4).standard_normal(kernel.shape[1])
        np.testing.assert_allclose(apply_P0(checkerboard_1d.kit, v), 0.0, atol=1e-12)

    def test_fine_hat_example(self):
        """Fine hat at x=1/4 on n=2, r=1 projects to 3/8 of the coarse hat."""
        kit = build_projection_kit(build_two_level(1, 2, 1))
        v = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(apply_P0(kit, v), [3 / 8], atol=1e-15)

    def test_wrong_length(self, checkerboard_1d):
        with pytest.raises(ValueError):
            apply_P0(checkerboard_1d.kit, np.ones(3))


class TestSaddleSystem:
    def test_zero_rhs_gives_zero(self, checkerboard_1d):
        system = SaddleSystem(checkerboard_1d.A, checkerboard_1d.kit.C)
        solution = system.solve(np.zeros(checkerboard_1d.mesh.num_fine_free))
        assert np.all(solution.v == 0.0)
        assert np.all(solution.mu == 0.0)

    def test_matches_null_space_oracle(self, checkerboard_1d, null_space_oracle):
        rhs = np.random.default_rng(5).standard_normal(checkerboard_1d.mesh.num_fine_free)
        solution = solve_constrained(checkerboard_1d.A, checkerboard_1d.kit.C, rhs)
        expected = null_space_oracle(checkerboard_1d.A_dense, checkerboard_1d.C_dense, rhs)
        scale = np.abs(expected).max()
        np.testing.assert_allclose(solution.v, expected, atol=1e-10 * scale)
        assert solution.feasibility <= 1e-10 * (1 + np.linalg.norm(rhs))

    def test_multiplier_satisfies_stationarity(self, checkerboard_2d):
        rhs = checkerboard_2d.b
        solution = solve_constrained(checkerboard_2d.A, checkerboard_2d.kit.C, rhs)
        residual = (
            checkerboard_2d.A_dense @ solution.v + checkerboard_2d.C_dense.T @ solution.mu - rhs
        )
        assert np.linalg.norm(residual) <= 1e-9 * (1 + np.linalg.norm(rhs))

    def test_minimizes_over_feasible_perturbations(self, checkerboard_1d):
        A, b = checkerboard_1d.A_dense, checkerboard_1d.b
        v = solve_constrained(checkerboard_1d.A, checkerboard_1d.kit.C, b).v
        kernel = scipy.linalg.null_space(checkerboard_1d.C_dense)
        rng = np.random.default_rng(6)
        J_v = energy(A, b, v)[0]
        for _ in range(50):
            w = kernel @ rng.standard_normal(kernel.shape[1])
            assert energy(A, b, v + 1e-2 * w)[0] >= J_v

    def test_duplicate_rows_rejected(self, checkerboard_1d):
        C = checkerboard_1d.kit.C.matrix
        duplicated = sp.vstack([C, C[0]]).tocsr()
        with pytest.raises(ConstraintRankError) as exc_info:
            SaddleSystem(checkerboard_1d.A, duplicated)
        assert len(exc_info.value.rows) == 1
        assert exc_info.value.rows[0] in (0, C.shape[0])

    def test_zero_row_pruned(self, checkerboard_1d):
        C = checkerboard_1d.kit.C.matrix
        padded = sp.vstack([C, sp.csr_matrix((1, C.shape[1]))]).tocsr()
        system = SaddleSystem(checkerboard_1d.A, padded)
        solution = system.solve(checkerboard_1d.b)
        assert solution.mu[-1] == 0.0
        assert len(solution.active_rows) == C.shape[0]

        target = np.zeros(padded.shape[0])
        target[-1] = 1.0
        with pytest.raises(ConstraintRankError) as exc_info:
            system.solve(checkerboard_1d.b, target)
        assert exc_info.value.rows == [C.shape[0]]

    def test_unreachable_tolerance(self, checkerboard_1d):
        strict = Settings(_env_file=None, kkt_tolerance=1e-300, max_refinements=1)
        system = SaddleSystem(checkerboard_1d.A, checkerboard_1d.kit.C, settings_obj=strict)
        rhs = np.random.default_rng(7).standard_normal(checkerboard_1d.mesh.num_fine_free)
        with pytest.raises(KKTResidualError):
            system.solve(rhs)

    def test_column_mismatch(self, checkerboard_1d):
        with pytest.raises(ValueError):
            SaddleSystem(checkerboard_1d.A, checkerboard_1d.kit.C.matrix[:, :-1])


class TestReconstruction:
    def test_matches_oracle_with_target(self, checkerboard_1d, null_space_oracle):
        kit = checkerboard_1d.kit
        v_h = np.array([0.3, -1.0, 0.5])
        u = reconstruct(kit, checkerboard_1d.A, v_h, b=checkerboard_1d.b)
        expected = null_space_oracle(
            checkerboard_1d.A_dense, checkerboard_1d.C_dense, checkerboard_1d.b, kit.M_H @ v_h
        )
        np.testing.assert_allclose(u, expected, atol=1e-10 * np.abs(expected).max())

    def test_projects_back(self, checkerboard_2d):
        kit = checkerboard_2d.kit
        v_h = np.random.default_rng(8).standard_normal(kit.num_coarse)
        u = reconstruct(kit, checkerboard_2d.A, v_h, b=checkerboard_2d.b)
        np.testing.assert_allclose(apply_P0(kit, u), v_h, atol=1e-9)

    def test_idempotent(self, checkerboard_1d):
        kit, A, b = checkerboard_1d.kit, checkerboard_1d.A, checkerboard_1d.b
        system = SaddleSystem(A, kit.C)
        u = reconstruct(kit, A, np.array([1.0, 2.0, -1.0]), b=b, system=system)
        again = reconstruct(kit, A, apply_P0(kit, u), b=b, system=system)
        np.testing.assert_allclose(again, u, atol=1e-10 * np.abs(u).max())

    def test_affine_splitting(self, checkerboard_2d):
        """R(v_h) - R_h(v_h) is the fine-scale remainder R_f(f) = R(0)."""
        kit, A, b = checkerboard_2d.kit, checkerboard_2d.A, checkerboard_2d.b
        system = SaddleSystem(A, kit.C)
        v_h = np.random.default_rng(9).standard_normal(kit.num_coarse)
        full = reconstruct(kit, A, v_h, b=b, system=system)
        homogeneous = reconstruct(kit, A, v_h, system=system)
        remainder = reconstruct(kit, A, np.zeros(kit.num_coarse), b=b, system=system)
        np.testing.assert_allclose(full - homogeneous, remainder, atol=1e-10)

    def test_multiplier_projection_matches_saddle(self, checkerboard_2d):
        kit, A, b = checkerboard_2d.kit, checkerboard_2d.A, checkerboard_2d.b
        v_h = np.linspace(-1, 1, kit.num_coarse)
        solution = SaddleSystem(A, kit.C).solve(b, kit.M_H @ v_h)
        mu = multiplier_projection(kit, A, b, solution.v)
        np.testing.assert_allclose(mu, solution.mu, rtol=1e-7, atol=1e-9 * np.abs(mu).max())

    def test_macro_energy_recovers_fine_minimum(self, checkerboard_1d):
        kit, A, b = checkerboard_1d.kit, checkerboard_1d.A, checkerboard_1d.b
        u = np.linalg.solve(checkerboard_1d.A_dense, b)
        J_min = energy(A, b, u)[0]
        assert macro_energy(kit, A, b, apply_P0(kit, u)) == pytest.approx(J_min, rel=1e-9)
        other = apply_P0(kit, u) + np.array([0.1, 0.0, -0.1])
        assert macro_energy(kit, A, b, other) > J_min
