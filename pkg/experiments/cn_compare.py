"""平衡格式与 Crank–Nicolson 的能量守恒对比"""

import logging

from core.config import ExperimentConfig
from dycore.diagnostics import write_summary
from experiments.initial_conditions import init_bubble
from experiments.runner import ExperimentResult, run_column, suffixed_path

logger = logging.getLogger("BalCol-Experiment")

EXPERIMENT_META = {
    "name": "cn-compare",
    "handler": "run",
    "description": "同一暖泡柱初值分别用平衡格式和 Crank–Nicolson 推进，输出成对账本与漂移比",
    "version": "1.0.0",
    "defaults": {"include_w_in_criteria": False, "tolerance": 1e-12},
}

# CN 与平衡格式最大能量漂移比的验收下限
RATIO_FLOOR = 1e2


def run(config: ExperimentConfig) -> ExperimentResult:
    initial = init_bubble(config)
    result = ExperimentResult()
    rows = []
    for label, integrator in (("balanced", "balanced"), ("cn", "crank-nicolson")):
        path = suffixed_path(config.output, f"_{label}")
        ledger = run_column(config, initial, path, label=label, integrator=integrator)
        result.ledgers[label] = ledger
        result.outputs.append(path)
        rows.append({"integrator": integrator, **ledger.summary()})

    balanced = rows[0]["max_abs_H_rel_err"]
    ratio = rows[1]["max_abs_H_rel_err"] / balanced if balanced > 0 else float("inf")
    for row in rows:
        row["cn_to_balanced_ratio"] = float(ratio)
    meets_floor = bool(ratio >= RATIO_FLOOR)
    if meets_floor:
        logger.info(f"📊 CN / 平衡格式最大能量漂移比: {ratio:.3e}")
    else:
        logger.warning(f"⚠️ CN / 平衡格式最大能量漂移比 {ratio:.3e} 低于 {RATIO_FLOOR:g}")

    summary_path = suffixed_path(config.output, "_summary")
    write_summary(rows, summary_path)
    result.outputs.append(summary_path)
    result.summary = {"rows": rows, "cn_to_balanced_ratio": float(ratio), "meets_ratio_floor": meets_floor}
    return result
