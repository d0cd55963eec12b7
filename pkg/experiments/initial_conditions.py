"""初始场：离散静力平衡柱、暖泡扰动（列模式与 x–z 切片）"""

import logging
from typing import Optional, Union

import numpy as np
import scipy.linalg

from core.config import ExperimentConfig
from core.errors import InvalidArgument
from dycore.balanced_integrator import ColumnState, operators_for
from dycore.hevi_driver import SliceState
from dycore.mimetic1d import VerticalGrid, assemble_weighted_S, build_grid
from dycore.thermo import GasConstants, diagnose_theta, invert_exner

logger = logging.getLogger("BalCol-Experiment")

ADJUSTMENT_MAX_ITERATIONS = 20
ADJUSTMENT_TOLERANCE = 1e-15


def hydrostatic_exner(z, theta0: float, consts: GasConstants) -> np.ndarray:
    """等位温大气的 Exner 气压 Π = cp·(1 − g·z/(cp·θ₀))"""
    return consts.cp * (1.0 - consts.g * np.asarray(z, dtype=np.float64) / (consts.cp * theta0))


def adjust_to_discrete_balance(state: ColumnState, consts: GasConstants,
                               max_iterations: int = ADJUSTMENT_MAX_ITERATIONS) -> ColumnState:
    """静止柱的离散静力调整：保持层内位温 Θ/ρ 与最底层 Π 不变，
    使 S(θ)·MU⁻¹·E32ᵀ·Π = −E32ᵀ·g·z̄ 离散成立，Θ、ρ 随状态方程更新
    """
    grid = state.grid
    ops = operators_for(grid)
    if grid.n_u == 0:
        return state
    theta_q = state.Theta / state.rho
    Pi = state.Pi.copy()
    rhs = np.concatenate(([Pi[0]], -(ops.E32.T @ (consts.g * grid.z_mid))))
    pin = np.zeros((1, grid.n_levels))
    pin[0, 0] = 1.0

    for iteration in range(1, max_iterations + 1):
        Theta = invert_exner(Pi, consts)
        rho = Theta / theta_q
        theta = diagnose_theta(Theta, rho, ops)
        system = np.vstack((pin, assemble_weighted_S(grid, theta) @ ops.grad_q))
        new_Pi = scipy.linalg.solve(system, rhs)
        change = float(np.max(np.abs(new_Pi - Pi) / np.abs(Pi)))
        Pi = new_Pi
        if np.any(Pi <= 0):
            raise InvalidArgument("静力调整得到非正的 Exner 气压，检查 z_top 与 θ₀")
        logger.debug(f"🔄 静力调整第 {iteration} 次迭代，最大相对变化 {change:.3e}")
        if change <= ADJUSTMENT_TOLERANCE:
            break

    Theta = invert_exner(Pi, consts)
    return state.replace(w=np.zeros(grid.n_u), rho=Theta / theta_q, Theta=Theta, Pi=Pi)


def _grid_and_constants(config: ExperimentConfig):
    return build_grid(config.n_levels, config.z_top), GasConstants.from_config(config)


def init_hydrostatic_column(config: ExperimentConfig, grid: Optional[VerticalGrid] = None,
                            adjust: bool = True) -> ColumnState:
    """θ ≡ θ₀ 的静止静力平衡柱，Π 取层中点闭式值后做离散静力调整"""
    if grid is None:
        grid, consts = _grid_and_constants(config)
    else:
        consts = GasConstants.from_config(config)
    if not config.theta0 > 0:
        raise InvalidArgument(f"θ₀ 必须为正，收到 {config.theta0!r}")
    ceiling = consts.cp * config.theta0 / consts.g
    if grid.z_top >= ceiling:
        raise InvalidArgument(f"z_top={grid.z_top} 超过等位温大气顶 cp·θ₀/g = {ceiling:.1f}",
                              context={"z_top": grid.z_top, "ceiling": ceiling})

    Pi = hydrostatic_exner(grid.z_mid, config.theta0, consts)
    Theta = invert_exner(Pi, consts)
    state = ColumnState(grid, np.zeros(grid.n_u), Theta / config.theta0, Theta, Pi)
    if adjust:
        state = adjust_to_discrete_balance(state, consts)
    return state


def bubble_perturbation(r, amplitude: float, r0: float) -> np.ndarray:
    """θ′ = A·(1 + cos(π r / r₀))，r > r₀ 处严格为 0"""
    r = np.abs(np.asarray(r, dtype=np.float64))
    return np.where(r <= r0, amplitude * (1.0 + np.cos(np.pi * np.minimum(r, r0) / r0)), 0.0)


def _check_bubble_geometry(config: ExperimentConfig, z_top: float) -> None:
    if not config.bubble_r0 > 0:
        raise InvalidArgument(f"bubble_r0 必须为正，收到 {config.bubble_r0!r}")
    if not 0.0 <= config.bubble_zc <= z_top:
        raise InvalidArgument(f"暖泡中心高度 {config.bubble_zc} 不在 [0, {z_top}] 内")


def _with_bubble(base: ColumnState, theta_prime: np.ndarray, theta0: float) -> ColumnState:
    # Π、Θ 不变，只重算密度
    return base.replace(rho=base.Theta / (theta0 + theta_prime))


def init_bubble(config: ExperimentConfig, slice_mode: bool = False) -> Union[ColumnState, SliceState]:
    """在静力平衡背景上叠加暖泡

    列模式 r = |z − z_c|；切片模式 r = √((x − x_c)² + (z − z_c)²)，x_i = (i + ½)·dx。
    """
    grid, _ = _grid_and_constants(config)
    _check_bubble_geometry(config, grid.z_top)
    base = init_hydrostatic_column(config, grid=grid)
    if not slice_mode:
        r = grid.z_mid - config.bubble_zc
        return _with_bubble(base, bubble_perturbation(r, config.bubble_amplitude, config.bubble_r0), config.theta0)

    width = config.n_columns * config.dx
    if not 0.0 <= config.bubble_xc <= width:
        raise InvalidArgument(f"暖泡中心 x={config.bubble_xc} 不在切片 [0, {width}] 内")
    x = (np.arange(config.n_columns) + 0.5) * config.dx
    columns = []
    for xi in x:
        r = np.hypot(xi - config.bubble_xc, grid.z_mid - config.bubble_zc)
        columns.append(_with_bubble(base, bubble_perturbation(r, config.bubble_amplitude, config.bubble_r0),
                                    config.theta0))
    return SliceState(columns=tuple(columns), u_par=np.zeros((config.n_columns, grid.n_levels)),
                      grid=grid, dx=config.dx)


def theta_max_height(state: Union[ColumnState, SliceState]) -> float:
    """层内位温 Θ/ρ 最大值所在高度"""
    if isinstance(state, SliceState):
        theta = state.stacked("Theta") / state.stacked("rho")
        _, level = np.unravel_index(np.argmax(theta), theta.shape)
        return float(state.grid.z_mid[level])
    return float(state.grid.z_mid[np.argmax(state.Theta / state.rho)])
