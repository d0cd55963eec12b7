import math

import numpy as np
import pytest

from core.config import EXPERIMENTS, ExperimentConfig
from core.errors import ConfigError, InvalidArgument
from core.experiment_manager import experiment_manager
from dycore.balanced_integrator import operators_for
from dycore.hevi_driver import SliceState
from dycore.thermo import diagnose_exner, diagnose_theta
from experiments.initial_conditions import (
    bubble_perturbation,
    hydrostatic_exner,
    init_bubble,
    init_hydrostatic_column,
    theta_max_height,
)
from experiments.runner import suffixed_path
from experiments.tolerance_sweep import ITERATION_GROWTH_RANGE, add_extra_iterations, drift_is_monotone


class TestInitialConditions:
    def test_surface_exner_is_cp(self, consts):
        assert hydrostatic_exner(0.0, 300.0, consts) == consts.cp

    def test_exner_scalar_value(self, consts):
        expected = 1004.5 * (1.0 - 9.80616 * 350.0 / (1004.5 * 300.0))
        assert float(hydrostatic_exner(350.0, 300.0, consts)) == pytest.approx(expected, rel=1e-15)

    def test_top_above_isentropic_ceiling_rejected(self):
        with pytest.raises(InvalidArgument):
            init_hydrostatic_column(ExperimentConfig(n_levels=10, z_top=40000.0))

    def test_hydrostatic_state_is_consistent(self, hydrostatic_column, consts):
        state = hydrostatic_column
        np.testing.assert_array_equal(state.w, 0.0)
        np.testing.assert_allclose(state.Pi, diagnose_exner(state.Theta, consts), rtol=1e-13)
        np.testing.assert_allclose(state.Theta / state.rho, 300.0, rtol=1e-13)
        ops = operators_for(state.grid)
        theta = diagnose_theta(state.Theta, state.rho, ops)
        balance = (ops.at_state(theta=theta).S_theta @ (ops.grad_q @ state.Pi)
                   + ops.E32.T @ (consts.g * state.grid.z_mid))
        assert np.abs(balance).max() <= 1e-9 * consts.g * state.grid.z_top

    def test_bubble_profile(self):
        assert bubble_perturbation(0.0, 0.25, 250.0) == pytest.approx(0.5)
        assert bubble_perturbation(250.0, 0.25, 250.0) == pytest.approx(0.0, abs=1e-15)
        assert bubble_perturbation(260.0, 0.25, 250.0) == 0.0
        assert bubble_perturbation(125.0, 0.25, 250.0) == pytest.approx(0.25)

    def test_bubble_column_keeps_pressure(self, small_config):
        base = init_hydrostatic_column(small_config)
        bubble = init_bubble(small_config)
        np.testing.assert_array_equal(bubble.Pi, base.Pi)
        np.testing.assert_array_equal(bubble.Theta, base.Theta)
        assert np.all(bubble.rho <= base.rho * (1.0 + 1e-14))
        assert theta_max_height(bubble) == pytest.approx(small_config.bubble_zc, abs=small_config.z_top / 20)

    def test_bubble_slice_layout(self):
        config = ExperimentConfig(n_levels=10, n_columns=8, dx=62.5, bubble_xc=250.0)
        state = init_bubble(config, slice_mode=True)
        assert isinstance(state, SliceState)
        assert state.n_columns == 8
        np.testing.assert_array_equal(state.u_par, 0.0)
        theta = state.stacked("Theta") / state.stacked("rho")
        assert np.argmax(theta.max(axis=1)) in (3, 4)
        np.testing.assert_allclose(theta[0, 0], 300.0, rtol=1e-12)

    def test_bubble_centre_outside_slice(self):
        with pytest.raises(InvalidArgument):
            init_bubble(ExperimentConfig(n_levels=10, n_columns=4, dx=62.5, bubble_xc=500.0 + 1.0), slice_mode=True)

    def test_bubble_centre_above_top(self):
        with pytest.raises(InvalidArgument):
            init_bubble(ExperimentConfig(n_levels=10, bubble_zc=2000.0))


class TestRegistry:
    def test_all_presets_registered(self):
        assert experiment_manager.names() == sorted(EXPERIMENTS)

    def test_preset_defaults(self):
        assert experiment_manager.defaults_for("bubble-slice") == {
            "n_levels": 75, "dt": 0.1, "n_steps": 2000, "include_w_in_criteria": False,
            "experiment": "bubble-slice",
        }
        assert experiment_manager.defaults_for("cn-compare")["tolerance"] == 1e-12

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            experiment_manager.get("squall-line")

    def test_rescan(self):
        experiment_manager.reset()
        assert len(experiment_manager.describe()) == len(EXPERIMENTS)

    def test_suffixed_path(self):
        assert suffixed_path("out/ledger.csv", "_cn") == "out/ledger_cn.csv"
        assert suffixed_path("ledger", "_summary") == "ledger_summary.csv"


class TestPresetSummaries:
    def _config(self, tmp_path, experiment):
        return ExperimentConfig(**experiment_manager.defaults_for(experiment), n_levels=12, n_steps=3,
                                output=str(tmp_path / f"{experiment}.csv"))

    def test_cn_compare_reports_ratio_floor(self, tmp_path):
        result = experiment_manager.run(self._config(tmp_path, "cn-compare"))
        ratio = result.summary["cn_to_balanced_ratio"]
        assert result.summary["meets_ratio_floor"] is bool(ratio >= 1e2)

    def test_bubble_column_reports_energy_trend(self, tmp_path):
        result = experiment_manager.run(self._config(tmp_path, "bubble-column"))
        records = result.ledgers["bubble-column"].records
        summary = result.summary
        assert summary["trend_window_s"] == 3.0
        assert summary["P_change"] == records[-1].P - records[0].P
        assert summary["K_change"] == records[-1].K - records[0].K
        assert isinstance(summary["K_monotone_increase"], bool)


class TestToleranceSweepSummary:
    TOLERANCES = [1e-6, 1e-8, 1e-10, 1e-12, 1e-14]

    def _rows(self, iterations):
        return [{"tolerance": tol, "mean_newton_iters": its} for tol, its in zip(self.TOLERANCES, iterations)]

    def test_extra_iterations_relative_to_reference(self):
        rows = self._rows([2.0, 3.0, 4.0, 4.0, 4.65])
        growth = add_extra_iterations(rows)
        assert growth == pytest.approx(1.65)
        assert [row["extra_iterations"] for row in rows] == pytest.approx([-1.0, 0.0, 1.0, 1.0, 1.65])
        low, high = ITERATION_GROWTH_RANGE
        assert not low <= growth <= high

    def test_missing_reference_gives_nan(self):
        rows = [{"tolerance": 1e-6, "mean_newton_iters": 2.0}, {"tolerance": 1e-10, "mean_newton_iters": 4.0}]
        assert math.isnan(add_extra_iterations(rows))
        assert all(math.isnan(row["extra_iterations"]) for row in rows)

    def test_drift_saturating_at_roundoff_is_monotone(self):
        drifts = [1.07e-9, 1.62e-12, 1.17e-15, 5.0e-16, 6.7e-16]
        assert drift_is_monotone(self.TOLERANCES, drifts)
        assert drift_is_monotone(list(reversed(self.TOLERANCES)), list(reversed(drifts)))

    def test_growing_drift_is_not_monotone(self):
        assert not drift_is_monotone(self.TOLERANCES, [1e-9, 1e-12, 1e-10, 1e-15, 1e-16])
        assert not drift_is_monotone([1e-8, 1e-12], [1e-10, 1e-9], noise_floor=0.0)


@pytest.mark.slow
class TestAcceptance:
    def test_bubble_column_conservation(self, tmp_path):
        config = ExperimentConfig(experiment="bubble-column", n_levels=150, n_steps=400, tolerance=1e-14,
                                  accept_nonconverged=True)
        result = experiment_manager.run(config.replace(output=str(tmp_path / "bubble.csv")))
        ledger = result.ledgers["bubble-column"]
        assert abs(ledger.records[-1].mass_rel_err) <= 1e-13
        assert ledger.summary()["max_abs_H_rel_err"] <= 1e-11
        assert math.isfinite(result.summary["theta_max_height_final"])

    def test_tolerance_sweep_drift_and_iterations(self, tmp_path):
        config = ExperimentConfig(**experiment_manager.defaults_for("tolerance-sweep"),
                                  output=str(tmp_path / "sweep.csv"))
        result = experiment_manager.run(config)
        rows = sorted(result.summary["rows"], key=lambda row: row["tolerance"], reverse=True)
        assert result.summary["drift_monotone"]
        assert rows[0]["max_abs_H_rel_err"] >= 100.0 * rows[-1]["max_abs_H_rel_err"]
        iterations = [row["mean_newton_iters"] for row in rows]
        assert all(tighter >= looser for looser, tighter in zip(iterations, iterations[1:]))
        assert result.summary["iteration_growth"] >= 1.0
