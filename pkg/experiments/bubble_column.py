"""仅垂直动力的暖泡柱"""

import logging

from core.config import ExperimentConfig
from dycore.diagnostics import energy_trend, write_metadata
from experiments.initial_conditions import init_bubble, theta_max_height
from experiments.runner import ExperimentResult, run_column

logger = logging.getLogger("BalCol-Experiment")

EXPERIMENT_META = {
    "name": "bubble-column",
    "handler": "run",
    "description": "暖泡的一维垂直限制（无水平变化），150 层、Δt = 1 s、400 步",
    "version": "1.0.0",
    "defaults": {"include_w_in_criteria": False},
}

TREND_WINDOW_S = 100.0


def run(config: ExperimentConfig) -> ExperimentResult:
    state = init_bubble(config)
    initial_height = theta_max_height(state)
    ledger = run_column(
        config, state, config.output, label="bubble-column",
        finalize=lambda final: {"theta_max_height_initial": initial_height,
                                "theta_max_height_final": theta_max_height(final)},
    )
    trend = energy_trend(ledger, TREND_WINDOW_S)
    if trend:
        ledger.metadata.update(trend)
        write_metadata(ledger, config.output)
        logger.info(f"📊 前 {trend['trend_window_s']:g} s：ΔP = {trend['P_change']:.6e}"
                    f"（单调减少: {trend['P_monotone_decrease']}），ΔK = {trend['K_change']:.6e}"
                    f"（单调增加: {trend['K_monotone_increase']}）")
    summary = ledger.summary()
    summary["theta_max_height_final"] = ledger.metadata["theta_max_height_final"]
    summary.update(trend)
    return ExperimentResult(ledgers={"bubble-column": ledger}, outputs=[config.output], summary=summary)
