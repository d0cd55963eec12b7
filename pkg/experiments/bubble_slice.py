"""周期 x–z 切片上的暖泡：TRAP(2,3,2) 水平显式 / 垂直隐式"""

from core.config import ExperimentConfig
from experiments.initial_conditions import init_bubble, theta_max_height
from experiments.runner import ExperimentResult, run_slice

EXPERIMENT_META = {
    "name": "bubble-slice",
    "handler": "run",
    "description": "二维暖泡，水平二阶中心通量 + 双调和耗散，逐列并行隐式求解",
    "version": "1.0.0",
    "defaults": {"n_levels": 75, "dt": 0.1, "n_steps": 2000, "include_w_in_criteria": False},
}


def run(config: ExperimentConfig) -> ExperimentResult:
    state = init_bubble(config, slice_mode=True)
    initial_height = theta_max_height(state)
    ledger = run_slice(
        config, state, config.output, label="bubble-slice",
        finalize=lambda final: {"theta_max_height_initial": initial_height,
                                "theta_max_height_final": theta_max_height(final)},
    )
    summary = ledger.summary()
    summary["theta_max_height_final"] = ledger.metadata["theta_max_height_final"]
    return ExperimentResult(ledgers={"bubble-slice": ledger}, outputs=[config.output], summary=summary)
