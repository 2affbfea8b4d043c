"""Tests for the fine-scale correctors, the remainder and the multiscale basis."""

import numpy as np
import pytest
import scipy.linalg

from hmm_lod.core.correctors import (
    GLOBAL,
    MultiscaleBasis,
    build_basis,
    compute_corrector,
    compute_correctors,
    compute_remainder,
    decay_profile,
    global_system,
    plain_basis,
    with_decay_profile,
)
from hmm_lod.core.decomposition import apply_P0
from hmm_lod.core.errors import MeshError
from hmm_lod.core.fem import energy_norm
from hmm_lod.core.mesh import nodal_patch, saturation_level


class TestCorrector:
    def test_global_corrector_matches_oracle(self, checkerboard_1d, null_space_oracle):
        s = checkerboard_1d
        z = s.mesh.coarse_node_at(2)
        corrector = compute_corrector(s.mesh, s.kit, s.A, z)
        hat = s.kit.P.toarray()[:, s.mesh.coarse_free_index[z]]
        expected = null_space_oracle(s.A_dense, s.C_dense, -s.A_dense @ hat)
        np.testing.assert_allclose(
            corrector.values, expected, atol=1e-10 * np.abs(expected).max()
        )
        assert corrector.is_global
        assert corrector.energy_norm == pytest.approx(energy_norm(s.A, expected), rel=1e-8)

    @pytest.mark.parametrize("k", [GLOBAL, 1, 2])
    def test_lies_in_fine_space(self, checkerboard_2d, k):
        s = checkerboard_2d
        z = s.mesh.coarse_node_at(2, 2)
        corrector = compute_corrector(s.mesh, s.kit, s.A, z, k)
        np.testing.assert_allclose(apply_P0(s.kit, corrector.values), 0.0, atol=1e-10)
        assert corrector.feasibility <= 1e-9

    def test_patch_support(self, checkerboard_2d):
        s = checkerboard_2d
        z = s.mesh.coarse_node_at(1, 1)
        corrector = compute_corrector(s.mesh, s.kit, s.A, z, 1)
        outside = np.ones(s.mesh.num_fine_free, dtype=bool)
        outside[nodal_patch(s.mesh, z, 1).fine_dofs(s.mesh)] = False
        assert np.all(corrector.values[outside] == 0.0)
        assert corrector.level == 1 and not corrector.is_global

    def test_saturated_equals_global(self, checkerboard_2d):
        s = checkerboard_2d
        system = global_system(s.kit, s.A)
        k = max(saturation_level(s.mesh, int(z)) for z in s.mesh.coarse_free)
        saturated = compute_correctors(s.mesh, s.kit, s.A, k, system=system)
        unlocalized = compute_correctors(s.mesh, s.kit, s.A, GLOBAL, system=system)
        for a, b in zip(saturated, unlocalized):
            np.testing.assert_array_equal(a.values, b.values)

    def test_linear_in_right_hand_side(self, checkerboard_2d):
        """Scaling or superposing hat loads scales or superposes the correctors."""
        s = checkerboard_2d
        system = global_system(s.kit, s.A)
        z1, z2 = s.mesh.coarse_node_at(1, 1), s.mesh.coarse_node_at(2, 3)
        phi1 = compute_corrector(s.mesh, s.kit, s.A, z1, system=system).values
        phi2 = compute_corrector(s.mesh, s.kit, s.A, z2, system=system).values
        P = s.kit.P.toarray()
        hat1 = P[:, s.mesh.coarse_free_index[z1]]
        hat2 = P[:, s.mesh.coarse_free_index[z2]]

        scaled = system.solve(-s.A_dense @ (-3.5 * hat1)).v
        np.testing.assert_allclose(scaled, -3.5 * phi1, atol=1e-10 * np.abs(phi1).max())
        combined = system.solve(-s.A_dense @ (hat1 + 2 * hat2)).v
        np.testing.assert_allclose(
            combined, phi1 + 2 * phi2, atol=1e-10 * np.abs(phi1 + 2 * phi2).max()
        )

    def test_boundary_node_rejected(self, checkerboard_1d):
        with pytest.raises(MeshError):
            compute_corrector(checkerboard_1d.mesh, checkerboard_1d.kit, checkerboard_1d.A, 0)

    def test_localization_error_shrinks(self, make_setup):
        """Patch correctors approach the global one as the patch grows."""
        s = make_setup(1, 8, 2, "checkerboard", {"epsilon": 1 / 16, "contrast": 10}, seed=3)
        z = s.mesh.coarse_node_at(4)
        reference = compute_corrector(s.mesh, s.kit, s.A, z).values
        diffs = [
            energy_norm(s.A, compute_corrector(s.mesh, s.kit, s.A, z, k).values - reference)
            for k in (1, 3, saturation_level(s.mesh, z))
        ]
        assert diffs[1] < diffs[0]
        assert diffs[2] <= 1e-10 * energy_norm(s.A, reference)


class TestComputeCorrectors:
    def test_node_order(self, checkerboard_2d):
        s = checkerboard_2d
        correctors = compute_correctors(s.mesh, s.kit, s.A, 1)
        assert [c.node for c in correctors] == s.mesh.coarse_free.tolist()

    def test_threads_do_not_change_results(self, checkerboard_2d):
        s = checkerboard_2d
        serial = compute_correctors(s.mesh, s.kit, s.A, 1, workers=1)
        threaded = compute_correctors(s.mesh, s.kit, s.A, 1, workers=2)
        for a, b in zip(serial, threaded):
            assert a.node == b.node
            np.testing.assert_array_equal(a.values, b.values)

    def test_subset_of_nodes(self, checkerboard_2d):
        s = checkerboard_2d
        nodes = [s.mesh.coarse_node_at(1, 1), s.mesh.coarse_node_at(3, 2)]
        correctors = compute_correctors(s.mesh, s.kit, s.A, GLOBAL, nodes=nodes)
        assert [c.node for c in correctors] == nodes


class TestRemainder:
    def test_zero_load(self, checkerboard_2d):
        s = checkerboard_2d
        remainder = compute_remainder(s.kit, s.A, np.zeros(s.mesh.num_fine_free))
        assert np.all(remainder == 0.0)

    def test_in_fine_space(self, checkerboard_2d):
        s = checkerboard_2d
        remainder = compute_remainder(s.kit, s.A, s.b)
        np.testing.assert_allclose(apply_P0(s.kit, remainder), 0.0, atol=1e-10)
        assert energy_norm(s.A, remainder) > 0

    def test_linear_in_load(self, checkerboard_1d):
        s = checkerboard_1d
        system = global_system(s.kit, s.A)
        rng = np.random.default_rng(11)
        b1, b2 = rng.standard_normal((2, s.mesh.num_fine_free))
        total = compute_remainder(s.kit, s.A, b1 + 2 * b2, system=system)
        parts = compute_remainder(s.kit, s.A, b1, system=system) + 2 * compute_remainder(
            s.kit, s.A, b2, system=system
        )
        np.testing.assert_allclose(total, parts, atol=1e-10 * np.abs(total).max())


class TestBasis:
    @pytest.mark.parametrize("k", [GLOBAL, 1])
    def test_projects_to_unit_vectors(self, checkerboard_2d, k):
        s = checkerboard_2d
        basis = build_basis(compute_correctors(s.mesh, s.kit, s.A, k), s.kit, s.mesh)
        B = basis.matrix.toarray()
        projected = np.column_stack([apply_P0(s.kit, B[:, j]) for j in range(B.shape[1])])
        np.testing.assert_allclose(projected, np.eye(s.mesh.num_coarse_free), atol=1e-9)

    def test_global_basis_is_energy_orthogonal_to_fine_space(self, checkerboard_1d):
        s = checkerboard_1d
        basis = build_basis(compute_correctors(s.mesh, s.kit, s.A), s.kit, s.mesh)
        kernel = scipy.linalg.null_space(s.C_dense)
        coupling = basis.matrix.T @ (s.A_dense @ kernel)
        assert np.abs(coupling).max() <= 1e-8 * np.abs(s.A_dense).max()

    def test_column_support(self, checkerboard_2d):
        s = checkerboard_2d
        basis = build_basis(compute_correctors(s.mesh, s.kit, s.A, 1), s.kit, s.mesh)
        P = s.kit.P.toarray()
        for column, z in enumerate(basis.nodes):
            allowed = np.zeros(s.mesh.num_fine_free, dtype=bool)
            allowed[nodal_patch(s.mesh, int(z), 1).fine_dofs(s.mesh)] = True
            allowed |= P[:, column] != 0
            values = basis.matrix[:, [column]].toarray().ravel()
            assert np.all(values[~allowed] == 0.0)
        assert basis.levels == (1,) * s.mesh.num_coarse_free

    def test_incomplete_set_rejected(self, checkerboard_1d):
        s = checkerboard_1d
        correctors = compute_correctors(s.mesh, s.kit, s.A, 1)
        with pytest.raises(ValueError):
            build_basis(correctors[:-1], s.kit, s.mesh)
        with pytest.raises(ValueError):
            build_basis(correctors + correctors[:1], s.kit, s.mesh)

    def test_plain_basis_gives_coarse_stiffness(self, make_setup):
        s = make_setup(1, 4, 2)
        basis = plain_basis(s.kit, s.mesh)
        assert isinstance(basis, MultiscaleBasis)
        coarse = (basis.matrix.T @ s.A.matrix @ basis.matrix).toarray()
        np.testing.assert_allclose(np.diag(coarse), 8.0)
        np.testing.assert_allclose(np.diag(coarse, 1), -4.0)


class TestDecayProfile:
    def test_tails_non_increasing_and_vanish(self, checkerboard_2d):
        s = checkerboard_2d
        z = s.mesh.coarse_node_at(1, 2)
        corrector = compute_corrector(s.mesh, s.kit, s.A, z)
        profile = decay_profile(corrector, s.mesh, s.coeff)
        layers = [layer for layer, _ in profile]
        tails = [tail for _, tail in profile]
        assert layers == list(range(1, saturation_level(s.mesh, z) + 1))
        assert all(a >= b for a, b in zip(tails, tails[1:]))
        assert tails[-1] == 0.0
        assert tails[0] <= corrector.energy_norm * (1 + 1e-12)

    def test_patch_corrector_rejected(self, checkerboard_2d):
        s = checkerboard_2d
        corrector = compute_corrector(s.mesh, s.kit, s.A, s.mesh.coarse_node_at(2, 2), 1)
        with pytest.raises(ValueError):
            decay_profile(corrector, s.mesh, s.coeff)

    def test_with_decay_profile(self, checkerboard_1d):
        s = checkerboard_1d
        corrector = compute_corrector(s.mesh, s.kit, s.A, s.mesh.coarse_node_at(1))
        enriched = with_decay_profile(corrector, s.mesh, s.coeff)
        assert enriched.tail_norms == tuple(decay_profile(corrector, s.mesh, s.coeff))
        assert corrector.tail_norms == ()
