"""静力平衡柱：离散不动点检验"""

from core.config import ExperimentConfig
from experiments.initial_conditions import init_hydrostatic_column
from experiments.runner import ExperimentResult, run_column

EXPERIMENT_META = {
    "name": "hydrostatic-column",  # 预设名称（即 CLI 子命令）
    "handler": "run",  # 入口函数名
    "description": "等位温静止柱，离散静力调整后推进，检验能量与质量漂移",
    "version": "1.0.0",
    "defaults": {"n_steps": 100},  # 覆盖注册默认值，低于配置文件与命令行
}


def run(config: ExperimentConfig) -> ExperimentResult:
    state = init_hydrostatic_column(config)
    ledger = run_column(config, state, config.output, label="hydrostatic-column",
                        finalize=lambda final: {"max_abs_w": float(abs(final.w).max(initial=0.0))})
    return ExperimentResult(ledgers={"hydrostatic-column": ledger}, outputs=[config.output],
                            summary=ledger.summary())
