"""TRAP(2,3,2) 水平显式 / 垂直隐式时间推进

单步三个阶段：
  1. 显式水平预测 a¹ = aⁿ + Δt·T(aⁿ)（w 保持 wⁿ，Π 由状态方程诊断）
  2. 逐列隐式求解，水平倾向取 ½(T(aⁿ) + T(a¹))
  3. 逐列隐式求解，水平倾向取 ½(T(aⁿ) + T(a²))
ρ、Θ 的水平倾向进入隐式求解的锚点状态 a*，w 的水平倾向作为耦合向量 R 进入 F_u，
u∥ 用同一平均倾向显式更新。列模式下倾向恒为零，两个隐式阶段退化为同一次求解。
"""

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from core.errors import BalColError, InvalidArgument
from core.logger_manager import logger_manager
from core.monitor import monitor_manager
from dycore.balanced_integrator import ColumnState, NewtonConfig, NewtonReport, operators_for, solve_column
from dycore.mimetic1d import VerticalGrid
from dycore.thermo import diagnose_exner

logger = logging.getLogger("BalCol-HEVI")

BIHARMONIC_COEFFICIENT = 0.072
BIHARMONIC_EXPONENT = 3.2
RAYLEIGH_RATES = (4.0, 2.0, 1.0)


@dataclasses.dataclass(frozen=True, eq=False)
class SliceState:
    """周期 x–z 切片：每个水平自由度一列，u∥ 位于列之间的面上

    u_par[i] 位于第 i 列与第 i+1 列之间（周期），按层存放。
    """
    columns: Tuple[ColumnState, ...]
    u_par: np.ndarray
    grid: VerticalGrid
    dx: float

    def __post_init__(self):
        columns = tuple(self.columns)
        if not columns:
            raise InvalidArgument("切片至少需要一列")
        if any(column.grid is not self.grid for column in columns):
            raise InvalidArgument("切片中所有列必须共享同一垂直网格")
        if not np.isfinite(self.dx) or self.dx <= 0:
            raise InvalidArgument(f"dx 必须为正，收到 {self.dx!r}")
        u_par = np.asarray(self.u_par, dtype=np.float64)
        if u_par.shape != (len(columns), self.grid.n_levels):
            raise InvalidArgument(f"u_par 形状应为 {(len(columns), self.grid.n_levels)}，实际 {u_par.shape}")
        object.__setattr__(self, "columns", columns)
        object.__setattr__(self, "u_par", u_par)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    def stacked(self, name: str) -> np.ndarray:
        """把各列的某个场叠成 (n_columns, ·) 数组"""
        return np.stack([getattr(column, name) for column in self.columns])

    @classmethod
    def from_arrays(cls, grid: VerticalGrid, dx: float, u_par, w, rho, Theta, Pi) -> "SliceState":
        columns = tuple(ColumnState(grid, w[i], rho[i], Theta[i], Pi[i]) for i in range(len(rho)))
        return cls(columns=columns, u_par=u_par, grid=grid, dx=dx)

    @classmethod
    def single_column(cls, column: ColumnState, dx: float = 1.0) -> "SliceState":
        """列模式：一列、u∥ ≡ 0"""
        return cls(columns=(column,), u_par=np.zeros((1, column.grid.n_levels)), grid=column.grid, dx=dx)


class HorizontalTendency(NamedTuple):
    """显式水平倾向；coupling_for_w 为 F_u 中的耦合向量 R（已乘 MU）"""
    du_par: np.ndarray
    d_rho: np.ndarray
    d_Theta: np.ndarray
    coupling_for_w: np.ndarray

    def averaged_with(self, other: "HorizontalTendency") -> "HorizontalTendency":
        return HorizontalTendency(*(0.5 * (a + b) for a, b in zip(self, other)))


TendencyProvider = Callable[[SliceState], HorizontalTendency]


def zero_tendencies(state: SliceState) -> HorizontalTendency:
    """列模式的水平倾向：全部为零"""
    shape_q = (state.n_columns, state.grid.n_levels)
    return HorizontalTendency(
        du_par=np.zeros(shape_q),
        d_rho=np.zeros(shape_q),
        d_Theta=np.zeros(shape_q),
        coupling_for_w=np.zeros((state.n_columns, state.grid.n_u)),
    )


def _forward(field: np.ndarray) -> np.ndarray:
    return np.roll(field, -1, axis=0)


def _backward(field: np.ndarray) -> np.ndarray:
    return np.roll(field, 1, axis=0)


def slice_horizontal_tendencies(state: SliceState) -> HorizontalTendency:
    """二阶中心通量形式的水平倾向

    ρ、Θ：面通量 U_x = ρ̄ₓ·u、θ̄ₓ·U_x 的差分，周期求和严格为零；
    u∥：−u∂ₓu − w∂zu − θ̄ₓ∂ₓΠ；w：−u∂ₓw，以 R = −MU·(∂w/∂t) 的形式返回。
    """
    grid = state.grid
    dx = state.dx
    u = state.u_par
    rho = state.stacked("rho")
    Theta = state.stacked("Theta")
    Pi = state.stacked("Pi")
    w = state.stacked("w")

    theta_q = Theta / rho
    rho_face = 0.5 * (rho + _forward(rho))
    theta_face = 0.5 * (theta_q + _forward(theta_q))
    mass_flux = rho_face * u
    heat_flux = theta_face * mass_flux
    d_rho = -(mass_flux - _backward(mass_flux)) / dx
    d_Theta = -(heat_flux - _backward(heat_flux)) / dx

    w_full = np.pad(w, ((0, 0), (1, 1)))
    w_centre = 0.5 * (w_full[:, :-1] + w_full[:, 1:])
    w_face = 0.5 * (w_centre + _forward(w_centre))
    dudx = (_forward(u) - _backward(u)) / (2.0 * dx)
    if grid.n_levels > 1:
        dudz = np.gradient(u, grid.z_mid, axis=1)
    else:
        dudz = np.zeros_like(u)
    du_par = -u * dudx - w_face * dudz - theta_face * (_forward(Pi) - Pi) / dx

    u_centre = 0.5 * (u + _backward(u))
    u_at_w = 0.5 * (u_centre[:, :-1] + u_centre[:, 1:])
    dwdx = (_forward(w) - _backward(w)) / (2.0 * dx)
    w_tendency = -u_at_w * dwdx
    MU = operators_for(grid).MU
    coupling = -np.stack([MU @ row for row in w_tendency]) if grid.n_u else np.zeros_like(w)
    return HorizontalTendency(du_par=du_par, d_rho=d_rho, d_Theta=d_Theta, coupling_for_w=coupling)


def biharmonic_coefficient(dx: float, factor: float = 1.0) -> float:
    """ν = 0.072·dx^3.2·factor"""
    return BIHARMONIC_COEFFICIENT * dx ** BIHARMONIC_EXPONENT * factor


def biharmonic_stabiliser(field, dx: float, factor: float = 1.0) -> np.ndarray:
    """−ν·∇∥⁴f，沿第 0 轴周期差分"""
    field = np.asarray(field, dtype=np.float64)
    laplacian = (_forward(field) - 2.0 * field + _backward(field)) / dx ** 2
    bilaplacian = (_forward(laplacian) - 2.0 * laplacian + _backward(laplacian)) / dx ** 2
    return -biharmonic_coefficient(dx, factor) * bilaplacian


def slice_tendency_provider(viscosity_factor: Optional[float] = 1.0) -> TendencyProvider:
    """水平倾向 + 对 u∥ 与 Θ 的双调和耗散；viscosity_factor 为 None 时不加耗散"""

    def provider(state: SliceState) -> HorizontalTendency:
        tendency = slice_horizontal_tendencies(state)
        if viscosity_factor is None or viscosity_factor == 0:
            return tendency
        return tendency._replace(
            du_par=tendency.du_par + biharmonic_stabiliser(state.u_par, state.dx, viscosity_factor),
            d_Theta=tendency.d_Theta + biharmonic_stabiliser(state.stacked("Theta"), state.dx, viscosity_factor),
        )

    return provider


def rayleigh_damping(w, dt: float, enabled: bool = True) -> np.ndarray:
    """顶部三个内部界面上的隐式 Rayleigh 阻尼 w ← w/(1 + dt·r)，r = {4, 2, 1}/dt（自顶向下）"""
    w = np.array(w, dtype=np.float64)
    if not enabled:
        return w
    if w.shape[-1] < len(RAYLEIGH_RATES):
        raise InvalidArgument("Rayleigh 阻尼要求至少 4 层")
    if not dt > 0:
        raise InvalidArgument(f"dt 必须为正，收到 {dt!r}")
    for depth, rate in enumerate(RAYLEIGH_RATES):
        w[..., -1 - depth] /= 1.0 + dt * (rate / dt)
    return w


@dataclasses.dataclass
class StepOutcome:
    """一步 TRAP(2,3,2) 的结果与两个隐式阶段的逐列报告"""
    state: SliceState
    stage_reports: List[List[NewtonReport]]
    tendency_evaluations: int = 0

    @property
    def reports(self) -> List[NewtonReport]:
        """最后一个隐式阶段的报告"""
        return self.stage_reports[-1]

    @property
    def max_iterations(self) -> int:
        return max(report.iterations for stage in self.stage_reports for report in stage)

    @property
    def powers(self) -> Tuple[float, float, float]:
        totals = np.sum([report.powers for report in self.reports], axis=0)
        return float(totals[0]), float(totals[1]), float(totals[2])

    @property
    def max_update_norms(self) -> Tuple[float, float, float, float]:
        norms = np.max([report.final_norms for report in self.reports], axis=0)
        return tuple(float(x) for x in norms)

    def summary_report(self) -> NewtonReport:
        """把逐列报告合并成一份：最大迭代数、最大更新范数、功率求和"""
        reports = [report for stage in self.stage_reports for report in stage]
        return NewtonReport(
            scheme=self.reports[0].scheme,
            iterations=self.max_iterations,
            update_norms=[self.max_update_norms],
            converged=all(report.converged for report in reports),
            powers=self.powers,
            chain_rule_residual=float(sum(report.chain_rule_residual for report in self.reports)),
            residual_norm=max(report.residual_norm for report in self.reports),
        )


def _solve_columns(state_n: SliceState, anchors: Sequence[ColumnState], couplings: np.ndarray,
                   config: NewtonConfig, integrator: str, executor: Optional[ThreadPoolExecutor],
                   coupled: bool) -> List[Tuple[ColumnState, NewtonReport]]:
    ops = operators_for(state_n.grid)

    def solve(index: int):
        try:
            return solve_column(
                state_n.columns[index], config, integrator,
                couplings[index] if coupled else None,
                anchor=anchors[index], ops=ops, column=index,
            )
        except BalColError as e:
            raise e.with_column(index)

    indices = range(state_n.n_columns)
    if executor is None or state_n.n_columns == 1:
        return [solve(i) for i in indices]
    return list(executor.map(solve, indices))


def trap232_step(state: SliceState, dt: float, tendency_provider: Optional[TendencyProvider],
                 config: NewtonConfig, integrator: str = "balanced", rayleigh: bool = False,
                 executor: Optional[ThreadPoolExecutor] = None) -> StepOutcome:
    """推进一步 Δt；tendency_provider 为 None 表示列模式（零水平倾向）"""
    if dt != config.dt:
        config = dataclasses.replace(config, dt=dt)
    provider = tendency_provider or zero_tendencies
    coupled = tendency_provider is not None
    consts = config.consts
    grid = state.grid

    tendency_n = provider(state)
    rho_1 = state.stacked("rho") + dt * tendency_n.d_rho
    Theta_1 = state.stacked("Theta") + dt * tendency_n.d_Theta
    stage = SliceState(
        columns=tuple(
            ColumnState(grid, column.w, rho_1[i], Theta_1[i], column.Pi if not coupled else diagnose_exner(Theta_1[i], consts))
            for i, column in enumerate(state.columns)
        ),
        u_par=state.u_par + dt * tendency_n.du_par,
        grid=grid,
        dx=state.dx,
    )
    for index, column in enumerate(stage.columns):
        try:
            column.check_physical()
        except BalColError as e:
            raise e.with_column(index)

    stage_reports: List[List[NewtonReport]] = []
    evaluations = 1
    for _ in range(2):
        averaged = tendency_n.averaged_with(provider(stage))
        evaluations += 1
        anchors = [
            column.replace(rho=column.rho + dt * averaged.d_rho[i], Theta=column.Theta + dt * averaged.d_Theta[i])
            for i, column in enumerate(state.columns)
        ]
        results = _solve_columns(state, anchors, averaged.coupling_for_w, config, integrator, executor, coupled)
        stage_reports.append([report for _, report in results])
        stage = SliceState(
            columns=tuple(column for column, _ in results),
            u_par=state.u_par + dt * averaged.du_par,
            grid=grid,
            dx=state.dx,
        )
    monitor_manager.record_stage(implicit_solves=2, tendency_evaluations=evaluations)

    if rayleigh:
        stage = dataclasses.replace(
            stage, columns=tuple(column.replace(w=rayleigh_damping(column.w, dt)) for column in stage.columns)
        )
    return StepOutcome(state=stage, stage_reports=stage_reports, tendency_evaluations=evaluations)


def column_step(state: ColumnState, config: NewtonConfig, integrator: str = "balanced",
                rayleigh: bool = False) -> Tuple[ColumnState, NewtonReport]:
    """列模式单步：一次隐式求解，可选 Rayleigh 阻尼"""
    new_state, report = solve_column(state, config, integrator)
    if rayleigh:
        new_state = new_state.replace(w=rayleigh_damping(new_state.w, config.dt))
    return new_state, report


def slice_mass(state: SliceState) -> float:
    """切片总质量 Σ ρ·dz·dx，固定求和顺序"""
    return float(np.sum(state.stacked("rho") * state.grid.dz[None, :]) * state.dx)


def run_steps(state: SliceState, n_steps: int, tendency_provider: Optional[TendencyProvider],
              config: NewtonConfig, integrator: str = "balanced", rayleigh: bool = False,
              threads: int = 0, on_step: Optional[Callable[[int, StepOutcome], None]] = None) -> SliceState:
    """连续推进 n_steps 步；threads ≤ 0 时使用全部逻辑 CPU"""
    workers = threads if threads > 0 else monitor_manager.default_thread_count()
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="balcol-column") as executor:
        for step in range(1, n_steps + 1):
            started = time.perf_counter()
            try:
                outcome = trap232_step(state, config.dt, tendency_provider, config, integrator, rayleigh, executor)
            except BalColError as e:
                monitor_manager.record_solver_error(e.code)
                logger_manager.log_with_context(logger, logging.ERROR, f"❌ 第 {step} 步失败: {e.message}",
                                                {"step": step, **e.to_dict()})
                raise
            monitor_manager.record_step(time.perf_counter() - started, outcome.max_iterations)
            state = outcome.state
            if on_step is not None:
                on_step(step, outcome)
    return state
