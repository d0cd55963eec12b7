from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from core.config import ExperimentConfig
from core.errors import InvalidArgument, NonConvergence, NonphysicalState
from core.experiment_manager import experiment_manager
from core.monitor import monitor_manager
from dycore.balanced_integrator import ColumnState, NewtonConfig, newton_solve
from dycore.hevi_driver import (
    SliceState,
    biharmonic_coefficient,
    biharmonic_stabiliser,
    column_step,
    rayleigh_damping,
    run_steps,
    slice_horizontal_tendencies,
    slice_mass,
    slice_tendency_provider,
    trap232_step,
    zero_tendencies,
)
from dycore.mimetic1d import build_grid
from experiments.initial_conditions import init_bubble, init_hydrostatic_column, theta_max_height
from experiments.runner import newton_config_from


def _uniform_slice(column: ColumnState, n_columns: int, dx: float = 62.5, u=None) -> SliceState:
    u_par = np.zeros((n_columns, column.grid.n_levels)) if u is None else u
    return SliceState(columns=(column,) * n_columns, u_par=u_par, grid=column.grid, dx=dx)


@pytest.fixture
def slice_config():
    return ExperimentConfig(n_levels=10, n_columns=8, dx=62.5, dt=0.1, bubble_xc=250.0,
                            include_w_in_criteria=False)


@pytest.fixture
def bubble_slice(slice_config):
    return init_bubble(slice_config, slice_mode=True)


class TestSliceState:
    def test_columns_must_share_grid(self, small_grid):
        other = build_grid(6, 1500.0)
        a = ColumnState(small_grid, np.zeros(5), np.ones(6), np.ones(6), np.ones(6))
        b = ColumnState(other, np.zeros(5), np.ones(6), np.ones(6), np.ones(6))
        with pytest.raises(InvalidArgument):
            SliceState(columns=(a, b), u_par=np.zeros((2, 6)), grid=small_grid, dx=1.0)

    def test_shape_and_spacing_checked(self, small_grid):
        column = ColumnState(small_grid, np.zeros(5), np.ones(6), np.ones(6), np.ones(6))
        with pytest.raises(InvalidArgument):
            SliceState(columns=(column,), u_par=np.zeros((2, 6)), grid=small_grid, dx=1.0)
        with pytest.raises(InvalidArgument):
            SliceState(columns=(column,), u_par=np.zeros((1, 6)), grid=small_grid, dx=0.0)
        with pytest.raises(InvalidArgument):
            SliceState(columns=(), u_par=np.zeros((0, 6)), grid=small_grid, dx=1.0)

    def test_stacked_fields(self, bubble_slice):
        assert bubble_slice.stacked("rho").shape == (8, 10)
        assert bubble_slice.stacked("w").shape == (8, 9)


class TestRayleighDamping:
    def test_top_three_factors(self):
        w = rayleigh_damping(np.ones(6), dt=0.5)
        np.testing.assert_allclose(w, [1.0, 1.0, 1.0, 1.0 / 2.0, 1.0 / 3.0, 1.0 / 5.0])

    def test_disabled_is_identity(self):
        w = np.arange(5.0)
        np.testing.assert_array_equal(rayleigh_damping(w, dt=1.0, enabled=False), w)

    def test_requires_enough_levels(self):
        with pytest.raises(InvalidArgument):
            rayleigh_damping(np.ones(2), dt=1.0)

    def test_column_step_applies_damping(self, bubble_column):
        config = NewtonConfig(dt=1.0, include_w_in_criteria=False)
        damped, _ = column_step(bubble_column, config, rayleigh=True)
        undamped, _ = column_step(bubble_column, config)
        np.testing.assert_allclose(damped.w[-1], undamped.w[-1] / 5.0)
        np.testing.assert_array_equal(damped.w[:-3], undamped.w[:-3])


class TestBiharmonic:
    def test_coefficient(self):
        assert biharmonic_coefficient(100.0) == pytest.approx(0.072 * 100.0 ** 3.2, rel=1e-15)
        assert biharmonic_coefficient(100.0, 0.5) == pytest.approx(0.036 * 100.0 ** 3.2, rel=1e-15)

    def test_constant_field_untouched(self):
        np.testing.assert_array_equal(biharmonic_stabiliser(np.full((8, 3), 7.0), 62.5), 0.0)

    def test_fourier_symbol(self):
        n, dx, mode = 16, 62.5, 3
        x = np.arange(n) * dx
        k = 2.0 * np.pi * mode / (n * dx)
        field = np.cos(k * x)
        symbol = (4.0 * np.sin(0.5 * k * dx) ** 2 / dx ** 2) ** 2
        expected = -biharmonic_coefficient(dx) * symbol * field
        np.testing.assert_allclose(biharmonic_stabiliser(field, dx), expected,
                                   atol=1e-12 * np.abs(expected).max())


class TestHorizontalTendencies:
    def test_uniform_slice_has_no_tendency(self, hydrostatic_column):
        tendency = slice_tendency_provider()(_uniform_slice(hydrostatic_column, 6))
        for part in tendency:
            np.testing.assert_allclose(part, 0.0, atol=1e-12)

    def test_flux_form_sums_to_zero(self, bubble_slice, rng):
        state = SliceState(columns=bubble_slice.columns, u_par=rng.standard_normal(bubble_slice.u_par.shape),
                           grid=bubble_slice.grid, dx=bubble_slice.dx)
        tendency = slice_horizontal_tendencies(state)
        scale = np.abs(tendency.d_rho).max()
        assert abs(np.sum(tendency.d_rho)) <= 1e-13 * scale * tendency.d_rho.size
        assert abs(np.sum(tendency.d_Theta)) <= 1e-13 * np.abs(tendency.d_Theta).max() * tendency.d_Theta.size

    def test_pressure_gradient_matches_derivative(self, small_grid):
        n, dx = 16, 62.5
        x = np.arange(n) * dx
        k = 2.0 * np.pi / (n * dx)
        columns = tuple(
            ColumnState(small_grid, np.zeros(5), np.ones(6), np.full(6, 300.0), np.full(6, 1000.0 + np.cos(k * xi)))
            for xi in x
        )
        state = SliceState(columns=columns, u_par=np.zeros((n, 6)), grid=small_grid, dx=dx)
        du = slice_horizontal_tendencies(state).du_par[:, 0]
        exact = 300.0 * k * np.sin(k * (x + 0.5 * dx))
        np.testing.assert_allclose(du, exact, rtol=0.01, atol=0.01 * np.abs(exact).max())

    def test_zero_tendencies_shapes(self, bubble_slice):
        tendency = zero_tendencies(bubble_slice)
        assert tendency.du_par.shape == (8, 10)
        assert tendency.coupling_for_w.shape == (8, 9)


class TestTrapStep:
    def test_column_mode_matches_single_solve(self, bubble_column):
        config = NewtonConfig(dt=1.0, include_w_in_criteria=False)
        outcome = trap232_step(SliceState.single_column(bubble_column), 1.0, None, config)
        direct, _ = newton_solve(bubble_column, config)
        assert outcome.state.columns[0].identical_to(direct)
        assert len(outcome.stage_reports) == 2

    def test_stage_counts(self, bubble_slice):
        monitor_manager.reset()
        config = NewtonConfig(dt=0.1, include_w_in_criteria=False)
        outcome = trap232_step(bubble_slice, 0.1, slice_tendency_provider(), config)
        assert outcome.tendency_evaluations == 3
        assert monitor_manager.stage_stats == {"implicit_solves": 2, "tendency_evaluations": 3}

    def test_slice_conserves_mass(self, bubble_slice):
        config = NewtonConfig(dt=0.1, tolerance=1e-12, include_w_in_criteria=False, accept_nonconverged=True)
        m0 = slice_mass(bubble_slice)
        state = bubble_slice
        for _ in range(3):
            state = trap232_step(state, 0.1, slice_tendency_provider(), config).state
        assert abs(slice_mass(state) - m0) <= 1e-13 * m0

    def test_bubble_rises_in_slice(self, bubble_slice):
        config = NewtonConfig(dt=0.1, include_w_in_criteria=False)
        outcome = trap232_step(bubble_slice, 0.1, slice_tendency_provider(), config)
        w = outcome.state.stacked("w")
        assert w.max() > 0.0
        assert outcome.max_iterations >= 1
        assert len(outcome.max_update_norms) == 4

    def test_parallel_matches_serial(self, bubble_slice):
        config = NewtonConfig(dt=0.1, include_w_in_criteria=False)
        provider = slice_tendency_provider()
        serial = trap232_step(bubble_slice, 0.1, provider, config)
        with ThreadPoolExecutor(max_workers=4) as executor:
            parallel = trap232_step(bubble_slice, 0.1, provider, config, executor=executor)
        for a, b in zip(serial.state.columns, parallel.state.columns):
            assert a.identical_to(b)

    def test_stage_error_tagged_with_column(self, bubble_slice):
        def provider(state):
            tendency = zero_tendencies(state)
            tendency.d_rho[2] = -1e6
            return tendency

        with pytest.raises(NonphysicalState) as info:
            trap232_step(bubble_slice, 0.1, provider, NewtonConfig(dt=0.1))
        assert info.value.column == 2

    def test_non_convergence_tagged_with_column(self, bubble_slice):
        config = NewtonConfig(dt=0.1, tolerance=1e-14, max_iterations=1, include_w_in_criteria=False)
        with pytest.raises(NonConvergence) as info:
            trap232_step(bubble_slice, 0.1, slice_tendency_provider(), config)
        assert info.value.column is not None
        assert info.value.to_dict()["column"] == info.value.column


class TestRunSteps:
    def test_resting_slice_stays_at_rest(self, small_config):
        column = init_hydrostatic_column(small_config)
        monitor_manager.reset()
        seen = []
        final = run_steps(_uniform_slice(column, 4), 3, slice_tendency_provider(),
                          NewtonConfig(dt=1.0, include_w_in_criteria=False), threads=2,
                          on_step=lambda step, outcome: seen.append(step))
        assert seen == [1, 2, 3]
        assert np.abs(final.stacked("w")).max() <= 1e-10
        assert np.abs(final.u_par).max() <= 1e-10
        assert monitor_manager.step_stats["total_steps"] == 3
        assert monitor_manager.stage_stats["implicit_solves"] == 6
        solver = monitor_manager.get_run_status()["solver"]
        assert solver["total_steps"] == 3
        assert solver["tendency_evaluations"] == 9
        assert solver["mean_newton_iterations"] >= 1

    def test_failure_is_recorded(self, bubble_slice):
        monitor_manager.reset()
        config = NewtonConfig(dt=0.1, tolerance=1e-14, max_iterations=1, include_w_in_criteria=False)
        with pytest.raises(NonConvergence):
            run_steps(bubble_slice, 2, slice_tendency_provider(), config, threads=1)
        assert monitor_manager.error_stats == {"non-convergence": 1}


@pytest.mark.slow
class TestLongRuns:
    def test_resting_slice_over_many_steps(self, small_config):
        column = init_hydrostatic_column(small_config)
        final = run_steps(_uniform_slice(column, 4), 100, slice_tendency_provider(),
                          NewtonConfig(dt=1.0, include_w_in_criteria=False), threads=2)
        assert np.abs(final.stacked("w")).max() <= 1e-10
        assert np.abs(final.u_par).max() <= 1e-10

    def test_bubble_rises_with_preset_defaults(self):
        config = ExperimentConfig(**experiment_manager.defaults_for("bubble-slice"))
        state = init_bubble(config, slice_mode=True)
        m0 = slice_mass(state)
        heights = [theta_max_height(state)]
        final = run_steps(state, config.n_steps, slice_tendency_provider(config.viscosity_factor),
                          newton_config_from(config), threads=config.threads,
                          on_step=lambda step, outcome: heights.append(theta_max_height(outcome.state)))
        assert len(heights) == config.n_steps + 1
        assert all(later >= earlier for earlier, later in zip(heights, heights[1:]))
        assert heights[-1] >= heights[0] + 60.0
        assert abs(slice_mass(final) - m0) <= 1e-13 * m0
