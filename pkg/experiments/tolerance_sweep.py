"""收敛容差扫描：同一暖泡柱在不同容差下的能量漂移与迭代数"""

import logging
import math
from typing import Any, Dict, List, Sequence

from core.config import ExperimentConfig
from dycore.diagnostics import write_summary
from experiments.initial_conditions import init_bubble
from experiments.runner import ExperimentResult, run_column, suffixed_path

logger = logging.getLogger("BalCol-Experiment")

EXPERIMENT_META = {
    "name": "tolerance-sweep",
    "handler": "run",
    "description": "在 sweep_tolerances 列出的每个容差下重复暖泡柱实验，输出逐容差账本与汇总",
    "version": "1.0.0",
    "defaults": {"include_w_in_criteria": False, "accept_nonconverged": True},
}

# 迭代数增长以该容差为基准；最紧容差相对基准的增量目标区间
REFERENCE_TOLERANCE = 1e-8
ITERATION_GROWTH_RANGE = (3.0, 9.0)
# 低于该量级的能量漂移视为舍入噪声
DRIFT_NOISE_FLOOR = 1e-14


def tolerance_label(tolerance: float) -> str:
    return "%g" % tolerance


def add_extra_iterations(rows: List[Dict[str, Any]], reference: float = REFERENCE_TOLERANCE) -> float:
    """给每行加 extra_iterations（相对基准容差的平均迭代增量），返回最紧容差的增量；无基准时为 nan"""
    base = next((row["mean_newton_iters"] for row in rows if math.isclose(row["tolerance"], reference)), None)
    for row in rows:
        row["extra_iterations"] = float("nan") if base is None else row["mean_newton_iters"] - base
    tightest = min(rows, key=lambda row: row["tolerance"])
    return tightest["extra_iterations"]


def drift_is_monotone(tolerances: Sequence[float], drifts: Sequence[float],
                      noise_floor: float = DRIFT_NOISE_FLOOR) -> bool:
    """容差收紧时漂移不增加；两者都在噪声以下的波动不计"""
    ordered = [abs(drift) for _, drift in sorted(zip(tolerances, drifts), reverse=True)]
    return all(tighter <= max(looser, noise_floor) for looser, tighter in zip(ordered, ordered[1:]))


def run(config: ExperimentConfig) -> ExperimentResult:
    initial = init_bubble(config)
    result = ExperimentResult()
    rows = []
    for tolerance in config.tolerances:
        label = f"tol{tolerance_label(tolerance)}"
        path = suffixed_path(config.output, f"_{label}")
        logger.info(f"🔄 容差 {tolerance:g} 开始")
        ledger = run_column(config, initial, path, label=label, tolerance=tolerance)
        result.ledgers[label] = ledger
        result.outputs.append(path)
        rows.append({"tolerance": float(tolerance), **ledger.summary()})

    growth = add_extra_iterations(rows)
    low, high = ITERATION_GROWTH_RANGE
    growth_in_range = bool(low <= growth <= high)
    monotone = drift_is_monotone([row["tolerance"] for row in rows], [row["max_abs_H_rel_err"] for row in rows])
    if math.isnan(growth):
        logger.info(f"📌 扫描未包含基准容差 {REFERENCE_TOLERANCE:g}，不计算迭代增量")
    elif growth_in_range:
        logger.info(f"📊 最紧容差比 {REFERENCE_TOLERANCE:g} 平均多 {growth:.2f} 次迭代")
    else:
        logger.warning(f"⚠️ 最紧容差比 {REFERENCE_TOLERANCE:g} 平均多 {growth:.2f} 次迭代，"
                       f"不在 [{low:g}, {high:g}] 内")
    if not monotone:
        logger.warning("⚠️ 能量漂移未随容差收紧单调下降")

    summary_path = suffixed_path(config.output, "_summary")
    write_summary(rows, summary_path)
    result.outputs.append(summary_path)
    result.summary = {"rows": rows, "iteration_growth": growth, "iteration_growth_in_range": growth_in_range,
                      "drift_monotone": monotone}
    return result
