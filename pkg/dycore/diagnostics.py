"""守恒与能量收支记录、CSV 输出"""

import csv
import dataclasses
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np

from core.config_manager import format_value
from core.errors import OutputError
from dycore.balanced_integrator import NewtonReport
from dycore.hevi_driver import slice_mass
from dycore.thermo import EnergyBudget, GasConstants, total_energy

logger = logging.getLogger("BalCol-Diagnostics")

CSV_COLUMNS = (
    "step", "time_s", "mass", "mass_rel_err", "K", "P", "I", "H", "H_rel_err",
    "dK_dt", "dP_dt", "dI_dt", "newton_iters",
    "max_update_w", "max_update_rho", "max_update_Theta", "max_update_Pi",
)
INTEGER_COLUMNS = ("step", "newton_iters")
FLOAT_FORMAT = "%.17g"


@dataclasses.dataclass(frozen=True)
class StepRecord:
    step: int
    time_s: float
    mass: float
    mass_rel_err: float
    K: float
    P: float
    I: float
    H: float
    H_rel_err: float
    dK_dt: float
    dP_dt: float
    dI_dt: float
    newton_iters: int
    max_update_w: float
    max_update_rho: float
    max_update_Theta: float
    max_update_Pi: float

    def as_row(self) -> List[str]:
        row = []
        for name in CSV_COLUMNS:
            value = getattr(self, name)
            row.append(str(int(value)) if name in INTEGER_COLUMNS else FLOAT_FORMAT % value)
        return row


@dataclasses.dataclass
class RunLedger:
    """逐步能量收支、质量与 Newton 摘要；metadata 保存配置回显、常数与网格"""
    dt: float = 0.0
    records: List[StepRecord] = dataclasses.field(default_factory=list)
    reports: List[Dict[str, Any]] = dataclasses.field(default_factory=list)
    metadata: Dict[str, Any] = dataclasses.field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def initial(self) -> Optional[StepRecord]:
        return self.records[0] if self.records else None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(record, name) for record in self.records])

    def summary(self) -> Dict[str, Any]:
        """漂移与迭代统计（扫描/对比实验的汇总行）"""
        if not self.records:
            return {"steps": 0}
        steps = self.records[1:]
        iterations = [record.newton_iters for record in steps]
        return {
            "steps": len(steps),
            "final_H_rel_err": self.records[-1].H_rel_err,
            "max_abs_H_rel_err": float(np.max(np.abs(self.column("H_rel_err")))),
            "final_mass_rel_err": self.records[-1].mass_rel_err,
            "mean_newton_iters": float(np.mean(iterations)) if iterations else 0.0,
            "max_newton_iters": int(max(iterations)) if iterations else 0,
        }


def energy_trend(ledger: RunLedger, window_s: float = 100.0) -> Dict[str, Any]:
    """前 window_s 秒内位能 P 与垂直动能 K 的净变化及是否单调（暖泡的物理合理性检查）"""
    records = [record for record in ledger.records if record.time_s <= window_s * (1.0 + 1e-12)]
    if len(records) < 2:
        return {}
    P = np.array([record.P for record in records])
    K = np.array([record.K for record in records])
    return {
        "trend_window_s": float(records[-1].time_s),
        "P_change": float(P[-1] - P[0]),
        "K_change": float(K[-1] - K[0]),
        "P_monotone_decrease": bool(np.all(np.diff(P) <= 0.0)),
        "K_monotone_increase": bool(np.all(np.diff(K) >= 0.0)),
    }


def _relative(value: float, initial: float) -> float:
    if initial == 0:
        return value - initial
    return (value - initial) / abs(initial)


def record_step(ledger: RunLedger, budget: EnergyBudget, report: Optional[NewtonReport] = None,
                time_s: Optional[float] = None) -> RunLedger:
    """追加一步，步号取账本当前长度（从 0 连续）

    mass_rel_err = (m − m₀)/|m₀|，H_rel_err = (K + P + I − H₀)/|H₀|；
    第 0 步没有报告，功率与迭代数为 0。
    """
    step = len(ledger.records)
    H = budget.K + budget.P + budget.I
    first = ledger.initial
    mass0 = first.mass if first else budget.mass
    H0 = first.H if first else H
    norms = report.final_norms if report is not None else (0.0, 0.0, 0.0, 0.0)
    powers = report.powers if report is not None else (budget.dK_dt, budget.dP_dt, budget.dI_dt)
    record = StepRecord(
        step=step,
        time_s=step * ledger.dt if time_s is None else time_s,
        mass=budget.mass,
        mass_rel_err=_relative(budget.mass, mass0),
        K=budget.K,
        P=budget.P,
        I=budget.I,
        H=H,
        H_rel_err=_relative(H, H0),
        dK_dt=powers[0],
        dP_dt=powers[1],
        dI_dt=powers[2],
        newton_iters=report.iterations if report is not None else 0,
        max_update_w=norms[0],
        max_update_rho=norms[1],
        max_update_Theta=norms[2],
        max_update_Pi=norms[3],
    )
    ledger.records.append(record)
    if report is not None:
        ledger.reports.append(report.summary())
    return ledger


def emit_csv(ledger: RunLedger, path: str) -> str:
    """写出 CSV：表头 + 每步一行，17 位有效数字，LF 换行"""
    try:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for record in ledger.records:
                writer.writerow(record.as_row())
    except OSError as e:
        raise OutputError(f"写入 CSV 失败: {e}", context={"path": path})
    logger.info(f"💾 已写出 {len(ledger.records)} 行到 {path}")
    return path


def write_metadata(ledger: RunLedger, path: str) -> str:
    """写出 <csv>.meta：key = value 形式的配置回显与运行信息"""
    meta_path = f"{path}.meta"
    try:
        with open(meta_path, "w", encoding="utf-8", newline="\n") as f:
            for key, value in ledger.metadata.items():
                f.write(f"{key} = {format_value(value)}\n")
    except OSError as e:
        raise OutputError(f"写入元数据失败: {e}", context={"path": meta_path})
    return meta_path


def read_csv(path: str) -> List[Dict[str, float]]:
    """读回 emit_csv 的输出；整数列为 int，其余为 float"""
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            return [
                {name: int(row[name]) if name in INTEGER_COLUMNS else float(row[name]) for name in CSV_COLUMNS}
                for row in reader
            ]
    except OSError as e:
        raise OutputError(f"读取 CSV 失败: {e}", context={"path": path})


def write_summary(rows: List[Dict[str, Any]], path: str) -> str:
    """写出汇总 CSV（扫描与对比实验），列取第一行的键"""
    if not rows:
        raise OutputError("汇总为空", context={"path": path})
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            header = list(rows[0].keys())
            writer.writerow(header)
            for row in rows:
                writer.writerow([FLOAT_FORMAT % row[k] if isinstance(row[k], float) else row[k] for k in header])
    except OSError as e:
        raise OutputError(f"写入汇总失败: {e}", context={"path": path})
    logger.info(f"💾 汇总已写出到 {path}")
    return path


def slice_budget(state, consts: GasConstants, powers=(0.0, 0.0, 0.0), step: int = 0) -> EnergyBudget:
    """切片的总能量收支：各列垂直能量与 u∥ 动能之和，按 dx 加权"""
    K = P = I = 0.0
    for column in state.columns:
        k, p, i = total_energy(column, state.grid, consts)
        K += k
        P += p
        I += i
    rho = state.stacked("rho")
    rho_face = 0.5 * (rho + np.roll(rho, -1, axis=0))
    K += 0.5 * float(np.sum(rho_face * state.u_par ** 2 * state.grid.dz[None, :]))
    dx = state.dx
    return EnergyBudget(K=K * dx, P=P * dx, I=I * dx, H=(K + P + I) * dx,
                        mass=slice_mass(state), dK_dt=powers[0] * dx, dP_dt=powers[1] * dx,
                        dI_dt=powers[2] * dx, step=step)
