"""实验公共运行循环：列模式 / 切片模式推进、账本记录、出错时写出部分账本"""

import dataclasses
import logging
import os
import time
from typing import Any, Callable, Dict, List, Optional

from core.config import ExperimentConfig
from core.errors import BalColError
from core.logger_manager import logger_manager
from core.monitor import monitor_manager
from dycore.balanced_integrator import ColumnState, NewtonConfig
from dycore.diagnostics import RunLedger, emit_csv, record_step, slice_budget, write_metadata
from dycore.hevi_driver import SliceState, StepOutcome, column_step, run_steps, slice_tendency_provider
from dycore.thermo import GasConstants, compute_budget

logger = logging.getLogger("BalCol-Experiment")


@dataclasses.dataclass
class ExperimentResult:
    """一次实验的产物：按标签的账本、写出的文件、汇总"""
    ledgers: Dict[str, RunLedger] = dataclasses.field(default_factory=dict)
    outputs: List[str] = dataclasses.field(default_factory=list)
    summary: Dict[str, Any] = dataclasses.field(default_factory=dict)


def newton_config_from(config: ExperimentConfig, tolerance: Optional[float] = None) -> NewtonConfig:
    return NewtonConfig(
        dt=config.dt,
        tolerance=config.tolerance if tolerance is None else tolerance,
        max_iterations=config.max_iterations,
        include_w_in_criteria=config.include_w_in_criteria,
        accept_nonconverged=config.accept_nonconverged,
        verify_schur=config.verify_schur,
        consts=GasConstants.from_config(config),
    )


def suffixed_path(path: str, suffix: str) -> str:
    """ledger.csv + "_cn" → ledger_cn.csv"""
    stem, ext = os.path.splitext(path)
    return f"{stem}{suffix}{ext or '.csv'}"


def new_ledger(config: ExperimentConfig, label: str, **extra) -> RunLedger:
    consts = GasConstants.from_config(config)
    metadata: Dict[str, Any] = dict(config.echo())
    metadata.update({"label": label, "R": consts.R, "kappa": consts.kappa})
    metadata.update(extra)
    return RunLedger(dt=config.dt, metadata=metadata)


def flush_ledger(ledger: RunLedger, path: str, partial: bool = False) -> str:
    """写出 CSV 与元数据；partial 标记写入元数据"""
    ledger.metadata["partial"] = partial
    ledger.metadata["steps_recorded"] = max(len(ledger) - 1, 0)
    emit_csv(ledger, path)
    write_metadata(ledger, path)
    if partial:
        logger.warning(f"⚠️ 运行中断，已写出部分账本 {path}（{len(ledger)} 行）")
    return path


def _log_progress(config: ExperimentConfig, label: str, step: int, ledger: RunLedger) -> None:
    if step % config.log_every == 0 or step == config.n_steps:
        record = ledger.records[-1]
        logger.info(f"📌 [{label}] 第 {step}/{config.n_steps} 步 | H 相对漂移 {record.H_rel_err:.3e} | "
                    f"质量相对漂移 {record.mass_rel_err:.3e} | Newton 迭代 {record.newton_iters}")


def _fail(error: BalColError, label: str, step: int) -> None:
    monitor_manager.record_solver_error(error.code)
    logger_manager.log_with_context(logger, logging.ERROR, f"❌ [{label}] 第 {step} 步求解失败: {error.message}",
                                    {"step": step, **error.to_dict()})


def run_column(config: ExperimentConfig, state: ColumnState, path: str, label: str = "column",
               integrator: Optional[str] = None, tolerance: Optional[float] = None,
               finalize: Optional[Callable[[ColumnState], Dict[str, Any]]] = None) -> RunLedger:
    """列模式：每步一次隐式求解（平衡格式或 CN）"""
    integrator = integrator or config.integrator
    newton = newton_config_from(config, tolerance)
    consts = newton.consts
    grid = state.grid
    ledger = new_ledger(config, label, integrator=integrator, tolerance_used=newton.tolerance)
    record_step(ledger, compute_budget(state, grid, consts, step=0), time_s=0.0)

    step = 0
    try:
        for step in range(1, config.n_steps + 1):
            started = time.perf_counter()
            state, report = column_step(state, newton, integrator, rayleigh=config.rayleigh)
            monitor_manager.record_step(time.perf_counter() - started, report.iterations)
            record_step(ledger, compute_budget(state, grid, consts, step=step), report)
            _log_progress(config, label, step, ledger)
    except BalColError as e:
        _fail(e, label, step)
        if finalize is not None:
            ledger.metadata.update(finalize(state))
        flush_ledger(ledger, path, partial=True)
        raise
    if finalize is not None:
        ledger.metadata.update(finalize(state))
    flush_ledger(ledger, path)
    return ledger


def run_slice(config: ExperimentConfig, state: SliceState, path: str, label: str = "slice",
              finalize: Optional[Callable[[SliceState], Dict[str, Any]]] = None) -> RunLedger:
    """切片模式：TRAP(2,3,2) 推进，逐列隐式求解并行"""
    newton = newton_config_from(config)
    consts = newton.consts
    provider = slice_tendency_provider(config.viscosity_factor)
    ledger = new_ledger(config, label, integrator=config.integrator, tolerance_used=newton.tolerance)
    record_step(ledger, slice_budget(state, consts, step=0), time_s=0.0)
    latest = {"state": state, "step": 0}

    def on_step(step: int, outcome: StepOutcome) -> None:
        report = outcome.summary_report()
        report.powers = tuple(p * state.dx for p in report.powers)
        record_step(ledger, slice_budget(outcome.state, consts, step=step), report)
        latest["state"], latest["step"] = outcome.state, step
        _log_progress(config, label, step, ledger)

    try:
        final = run_steps(state, config.n_steps, provider, newton, config.integrator,
                          rayleigh=config.rayleigh, threads=config.threads, on_step=on_step)
    except BalColError:
        if finalize is not None:
            ledger.metadata.update(finalize(latest["state"]))
        flush_ledger(ledger, path, partial=True)
        raise
    if finalize is not None:
        ledger.metadata.update(finalize(final))
    flush_ledger(ledger, path)
    return ledger
