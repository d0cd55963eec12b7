import numpy as np
import pytest
import scipy.sparse as sps

from core.errors import InvalidArgument, NonphysicalState
from dycore.mimetic1d import (
    assemble_L_UQ,
    assemble_mass_U,
    assemble_operators,
    assemble_weighted_N,
    assemble_weighted_S,
    assemble_weighted_T,
    build_grid,
    build_incidence,
    check_field,
    solve_symmetric_tridiagonal,
)
from tests.conftest import gauss_cell_quadrature, hat, linear_field


class TestGrid:
    def test_uniform_grid(self):
        grid = build_grid(4, 1000.0)
        np.testing.assert_allclose(grid.z_interfaces, [0.0, 250.0, 500.0, 750.0, 1000.0])
        assert grid.n_u == 3
        assert grid.z_top == 1000.0

    def test_weights_stretching_keeps_top(self, stretched_grid):
        assert stretched_grid.z_interfaces[0] == 0.0
        assert stretched_grid.z_interfaces[-1] == 1500.0
        assert np.all(stretched_grid.dz > 0)

    def test_callable_stretching(self):
        grid = build_grid(5, 1000.0, stretching=lambda s: s ** 2)
        assert np.all(np.diff(grid.dz) > 0)

    @pytest.mark.parametrize("n_levels", [0, -3, 2.5, True])
    def test_rejects_bad_level_count(self, n_levels):
        with pytest.raises(InvalidArgument):
            build_grid(n_levels, 1000.0)

    def test_rejects_non_monotone_stretching(self):
        with pytest.raises(InvalidArgument):
            build_grid(3, 1000.0, stretching=lambda s: 1.0 - s)

    def test_arrays_are_read_only(self, small_grid):
        with pytest.raises(ValueError):
            small_grid.dz[0] = 1.0

    def test_check_field_length(self, small_grid):
        with pytest.raises(InvalidArgument):
            check_field(np.ones(small_grid.n_levels), small_grid, "U", "w")
        assert check_field(np.ones(small_grid.n_u), small_grid, "U").dtype == np.float64


class TestIncidence:
    def test_three_levels(self):
        E32 = build_incidence(build_grid(3, 300.0)).toarray()
        np.testing.assert_array_equal(E32, [[1, 0], [-1, 1], [0, -1]])

    def test_columns_telescope(self, stretched_grid):
        E32 = build_incidence(stretched_grid)
        np.testing.assert_array_equal(np.ones(stretched_grid.n_levels) @ E32, np.zeros(stretched_grid.n_u))

    def test_strong_divergence_times_mass_is_incidence(self, stretched_grid):
        ops = assemble_operators(stretched_grid)
        np.testing.assert_allclose((ops.MQ @ ops.div).toarray(), ops.E32.toarray(), atol=1e-15)

    def test_adjoint_pairing(self, stretched_grid, rng):
        ops = assemble_operators(stretched_grid)
        phi = rng.standard_normal(stretched_grid.n_levels)
        w = rng.standard_normal(stretched_grid.n_u)
        left = phi @ (ops.MQ @ (ops.div @ w))
        right = w @ (ops.div.T @ (ops.MQ @ phi))
        assert left == pytest.approx(right, rel=1e-13)


class TestMassMatrices:
    def test_uniform_mass_U_entries(self):
        grid = build_grid(4, 400.0)
        MU = assemble_mass_U(grid).toarray()
        expected = np.array([
            [200.0 / 3.0, 100.0 / 6.0, 0.0],
            [100.0 / 6.0, 200.0 / 3.0, 100.0 / 6.0],
            [0.0, 100.0 / 6.0, 200.0 / 3.0],
        ])
        np.testing.assert_allclose(MU, expected, rtol=1e-15)

    def test_mass_U_is_spd(self, stretched_grid):
        MU = assemble_mass_U(stretched_grid).toarray()
        np.testing.assert_allclose(MU, MU.T)
        assert np.all(np.linalg.eigvalsh(MU) > 0)

    def test_unit_density_weighting_is_mass(self, stretched_grid):
        N = assemble_weighted_N(stretched_grid, np.ones(stretched_grid.n_levels))
        np.testing.assert_allclose(N.toarray(), assemble_mass_U(stretched_grid).toarray())

    def test_weighted_N_matches_quadrature(self, stretched_grid, rng):
        grid = stretched_grid
        rho = rng.uniform(0.5, 1.5, grid.n_levels)
        z, weights, cells = gauss_cell_quadrature(grid)
        oracle = np.array([[np.sum(weights * rho[cells] * hat(grid, i, z) * hat(grid, j, z))
                            for j in range(grid.n_u)] for i in range(grid.n_u)])
        np.testing.assert_allclose(assemble_weighted_N(grid, rho).toarray(), oracle, rtol=1e-12, atol=1e-12)

    def test_constant_theta_scales_mass(self, stretched_grid):
        theta = np.full(stretched_grid.n_levels + 1, 300.0)
        np.testing.assert_allclose(assemble_weighted_S(stretched_grid, theta).toarray(),
                                   300.0 * assemble_mass_U(stretched_grid).toarray(), rtol=1e-14)

    def test_weighted_S_matches_quadrature(self, stretched_grid, rng):
        grid = stretched_grid
        theta = rng.uniform(290.0, 310.0, grid.n_levels + 1)
        z, weights, _ = gauss_cell_quadrature(grid)
        theta_h = linear_field(grid, theta, z)
        oracle = np.array([[np.sum(weights * theta_h * hat(grid, i, z) * hat(grid, j, z))
                            for j in range(grid.n_u)] for i in range(grid.n_u)])
        np.testing.assert_allclose(assemble_weighted_S(grid, theta).toarray(), oracle, rtol=1e-12)


class TestKineticMatrices:
    def test_T_matches_quadrature(self, stretched_grid, rng):
        grid = stretched_grid
        w = rng.standard_normal(grid.n_u)
        z, weights, cells = gauss_cell_quadrature(grid)
        w_h = linear_field(grid, np.concatenate(([0.0], w, [0.0])), z)
        oracle = np.zeros((grid.n_levels, grid.n_u))
        for j in range(grid.n_u):
            np.add.at(oracle[:, j], cells, 0.5 * weights * w_h * hat(grid, j, z))
        np.testing.assert_allclose(assemble_weighted_T(grid, w).toarray(), oracle, rtol=1e-12, atol=1e-12)

    def test_T_is_symmetric_bilinear(self, stretched_grid, rng):
        a = rng.standard_normal(stretched_grid.n_u)
        b = rng.standard_normal(stretched_grid.n_u)
        np.testing.assert_allclose(assemble_weighted_T(stretched_grid, a) @ b,
                                   assemble_weighted_T(stretched_grid, b) @ a, rtol=1e-13, atol=1e-13)

    def test_T_quadratic_form_is_kinetic_density(self, stretched_grid, rng):
        grid = stretched_grid
        w = rng.standard_normal(grid.n_u)
        rho = rng.uniform(0.5, 1.5, grid.n_levels)
        kinetic = 0.5 * w @ (assemble_weighted_N(grid, rho) @ w)
        assert rho @ (assemble_weighted_T(grid, w) @ w) == pytest.approx(kinetic, rel=1e-13)


class TestPairingAndOperators:
    def test_L_UQ_columns_sum_to_depth(self, stretched_grid):
        L = assemble_L_UQ(stretched_grid)
        np.testing.assert_allclose(np.ones(stretched_grid.n_levels + 1) @ L, stretched_grid.dz)

    def test_gradient_solves_mass_system(self, stretched_grid):
        ops = assemble_operators(stretched_grid)
        np.testing.assert_allclose(ops.MU @ ops.grad_q, ops.E32.T.toarray(), atol=1e-12)

    def test_single_level_has_empty_velocity_space(self):
        grid = build_grid(1, 100.0)
        ops = assemble_operators(grid, rho=np.ones(1), theta=np.ones(2), w=np.zeros(0))
        assert ops.MU.shape == (0, 0)
        assert ops.E32.shape == (1, 0)
        assert ops.solve_mu(np.zeros(0)).shape == (0,)

    def test_two_levels_have_one_velocity_dof(self):
        grid = build_grid(2, 200.0)
        ops = assemble_operators(grid, rho=np.ones(2), theta=np.ones(3), w=np.array([0.5]))
        assert ops.MU.shape == (1, 1)
        mu = ops.MU.toarray()[0, 0]
        np.testing.assert_allclose(ops.solve_mu(np.array([3.0])), [3.0 / mu], rtol=1e-15)
        np.testing.assert_allclose(ops.solve_mu(np.array([[1.0, 2.0]])), [[1.0 / mu, 2.0 / mu]], rtol=1e-15)
        np.testing.assert_allclose(ops.MU @ ops.grad_q, ops.E32.T.toarray(), atol=1e-15)

    def test_single_dof_solve_requires_positive_diagonal(self):
        with pytest.raises(NonphysicalState):
            solve_symmetric_tridiagonal(sps.csr_matrix(np.array([[-1.0]])), np.ones(1))

    def test_at_state_keeps_static_matrices(self, small_grid):
        ops = assemble_operators(small_grid)
        weighted = ops.at_state(rho=np.ones(small_grid.n_levels))
        assert weighted.MU is ops.MU
        assert weighted.N_rho is not None and weighted.S_theta is None
