"""物理常数、状态方程、θ/Π 诊断、能量泛函与时间平均变分导数"""

import dataclasses
from typing import Optional, Tuple

import numpy as np

from core.errors import InvalidArgument, NonphysicalState
from dycore.mimetic1d import (
    OperatorSet,
    VerticalGrid,
    assemble_weighted_N,
    assemble_weighted_N_full,
    assemble_weighted_T,
    check_field,
    solve_symmetric_tridiagonal,
)


@dataclasses.dataclass(frozen=True)
class GasConstants:
    """干空气常数；R 由 cp − cv 得出，显式给出的 R 必须与之相等"""
    cp: float = 1004.5
    cv: float = 717.5
    p0: float = 1.0e5
    g: float = 9.80616
    R: Optional[float] = None

    def __post_init__(self):
        for name in ("cp", "cv", "p0", "g"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise InvalidArgument(f"常数 {name} 必须为正数，收到 {value!r}")
        R = self.cp - self.cv
        if R <= 0:
            raise InvalidArgument(f"cp 必须大于 cv（cp={self.cp}, cv={self.cv}）")
        if self.R is not None and self.R != R:
            raise InvalidArgument(f"R={self.R} 与 cp − cv = {R} 不一致")
        object.__setattr__(self, "R", R)

    @property
    def kappa(self) -> float:
        """R/cv"""
        return self.R / self.cv

    @property
    def internal_coefficient(self) -> float:
        """cv·(R/p0)^{R/cv}"""
        return self.cv * (self.R / self.p0) ** self.kappa

    @classmethod
    def from_config(cls, config) -> "GasConstants":
        return cls(cp=config.cp, cv=config.cv, p0=config.p0, g=config.g)


@dataclasses.dataclass(frozen=True)
class EnergyBudget:
    """单步能量收支；H = K + P + I"""
    K: float
    P: float
    I: float
    H: float
    mass: float
    dK_dt: float = 0.0
    dP_dt: float = 0.0
    dI_dt: float = 0.0
    step: int = 0


def diagnose_exner(Theta, consts: GasConstants) -> np.ndarray:
    """Π = cp·(R·Θ/p0)^{R/cv}，逐点计算（MQ 对角）"""
    Theta = np.asarray(Theta, dtype=np.float64)
    if np.any(~(Theta > 0)):
        raise NonphysicalState("Θ 必须处处为正", context={"min_Theta": float(np.min(Theta)) if Theta.size else None})
    return consts.cp * (consts.R * Theta / consts.p0) ** consts.kappa


def invert_exner(Pi, consts: GasConstants) -> np.ndarray:
    """状态方程反演：Θ = (p0/R)·(Π/cp)^{cv/R}"""
    Pi = np.asarray(Pi, dtype=np.float64)
    if np.any(~(Pi > 0)):
        raise NonphysicalState("Π 必须处处为正")
    return (consts.p0 / consts.R) * (Pi / consts.cp) ** (consts.cv / consts.R)


def diagnose_theta(Theta, rho, ops: OperatorSet) -> np.ndarray:
    """解 N_full(ρ)·θ = L_UQ·Θ，得到含边界界面的分片线性 θ"""
    grid = ops.grid
    Theta = check_field(Theta, grid, "Q", "Theta")
    rho = check_field(rho, grid, "Q", "rho")
    if np.any(~(rho > 0)):
        raise NonphysicalState("θ 诊断要求 ρ 处处为正", context={"min_rho": float(np.min(rho))})
    return solve_symmetric_tridiagonal(assemble_weighted_N_full(grid, rho), ops.L_UQ @ Theta)


def energy_kinetic(w, rho, grid: VerticalGrid) -> float:
    """K = ½ wᵀ N(ρ) w"""
    w = check_field(w, grid, "U", "w")
    if grid.n_u == 0:
        return 0.0
    return 0.5 * float(w @ (assemble_weighted_N(grid, rho) @ w))


def energy_potential(rho, grid: VerticalGrid, consts: GasConstants = GasConstants()) -> float:
    """P = g·Σ ρ_i·z̄_i·dz_i"""
    rho = check_field(rho, grid, "Q", "rho")
    return consts.g * float(np.sum(rho * grid.z_mid * grid.dz))


def energy_internal(Theta, consts: GasConstants, grid: VerticalGrid) -> float:
    """I = Σ cv·(R/p0)^{R/cv}·Θ_i^{cp/cv}·dz_i"""
    Theta = check_field(Theta, grid, "Q", "Theta")
    if np.any(~(Theta > 0)):
        raise NonphysicalState("Θ 必须处处为正")
    return float(np.sum(consts.internal_coefficient * Theta ** (consts.cp / consts.cv) * grid.dz))


def column_mass(rho, grid: VerticalGrid) -> float:
    return float(np.sum(check_field(rho, grid, "Q", "rho") * grid.dz))


def _weighted(ops: OperatorSet, state):
    N = ops.N_rho if ops.N_rho is not None else assemble_weighted_N(ops.grid, state.rho)
    T = ops.T_u if ops.T_u is not None else assemble_weighted_T(ops.grid, state.w)
    return N, T


def averaged_variational_derivatives(state_n, state_k, ops_n: OperatorSet, ops_k: OperatorSet,
                                     consts: GasConstants) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """沿 n → k 线性路径精确时间积分的变分导数 (Ū, Φ̄, Π̄)

    MU·Ū  = ⅓Nₙwⁿ + ⅙Nₙwᵏ + ⅙Nₖwⁿ + ⅓Nₖwᵏ
    MQ·Φ̄ = ⅓Tₙwⁿ + ⅓Tₖwⁿ + ⅓Tₖwᵏ + g·MQ·z
    Π̄    = ½(Πⁿ + Πᵏ)
    """
    grid = ops_n.grid
    N_n, T_n = _weighted(ops_n, state_n)
    N_k, T_k = _weighted(ops_k, state_k)
    wn, wk = state_n.w, state_k.w
    flux = (N_n @ wn) / 3.0 + (N_n @ wk) / 6.0 + (N_k @ wn) / 6.0 + (N_k @ wk) / 3.0
    Ubar = ops_n.solve_mu(flux)
    kinetic = (T_n @ wn + T_k @ wn + T_k @ wk) / 3.0
    Phibar = kinetic / grid.dz + consts.g * grid.z_mid
    Pibar = 0.5 * (state_n.Pi + state_k.Pi)
    return Ubar, Phibar, Pibar


def midpoint_variational_derivatives(state_n, state_k, ops_n: OperatorSet, ops_k: OperatorSet,
                                     consts: GasConstants) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Crank–Nicolson 版本：去掉交叉项，n 与 k 各取 ½"""
    grid = ops_n.grid
    N_n, T_n = _weighted(ops_n, state_n)
    N_k, T_k = _weighted(ops_k, state_k)
    wn, wk = state_n.w, state_k.w
    Ubar = ops_n.solve_mu(0.5 * (N_n @ wn + N_k @ wk))
    Phibar = 0.5 * (T_n @ wn + T_k @ wk) / grid.dz + consts.g * grid.z_mid
    Pibar = 0.5 * (state_n.Pi + state_k.Pi)
    return Ubar, Phibar, Pibar


def power_exchanges(Ubar, Phibar, Pibar, ops: OperatorSet,
                    consts: GasConstants = GasConstants()) -> Tuple[float, float, float]:
    """动能/位能/内能之间的功率交换 (dK/dt, dP/dt, dI/dt)

    ops.S_theta 须为时间中心 Ŝ。各项按转置成对计算，三者之和在舍入误差内为零。
    """
    grid = ops.grid
    if grid.n_u == 0:
        return 0.0, 0.0, 0.0
    if ops.S_theta is None:
        raise InvalidArgument("power_exchanges 需要时间中心的 S_theta")
    z = grid.z_mid
    mass_flux_div = ops.E32 @ Ubar
    pressure_gradient = ops.grad_q @ Pibar
    gravity = consts.g * float(z @ mass_flux_div)
    dK = gravity + float(Ubar @ (ops.S_theta @ pressure_gradient))
    dP = -gravity
    dI = -float(pressure_gradient @ (ops.S_theta @ Ubar))
    return dK, dP, dI


def chain_rule_residual(state_n, state_np1, Ubar, Phibar, Pibar, ops: OperatorSet) -> float:
    """离散链式法则残差 ŪᵀMUΔw + Φ̄ᵀMQΔρ + Π̄ᵀMQΔΘ

    收敛步上三项由反对称结构相互抵消，剩余量级与非线性残差相同。
    """
    dw = state_np1.w - state_n.w
    drho = state_np1.rho - state_n.rho
    dTheta = state_np1.Theta - state_n.Theta
    dz = ops.grid.dz
    return float(Ubar @ (ops.MU @ dw) + Phibar @ (dz * drho) + Pibar @ (dz * dTheta))


def total_energy(state, grid: VerticalGrid, consts: GasConstants) -> Tuple[float, float, float]:
    return (energy_kinetic(state.w, state.rho, grid),
            energy_potential(state.rho, grid, consts),
            energy_internal(state.Theta, consts, grid))


def energy_defect(state_n, state_np1, Ubar, Phibar, Pibar, ops: OperatorSet, consts: GasConstants) -> float:
    """ΔH 与变分导数配对之差：精确时间积分时只剩 Π̄ 的状态方程误差"""
    H_n = sum(total_energy(state_n, ops.grid, consts))
    H_np1 = sum(total_energy(state_np1, ops.grid, consts))
    dz = ops.grid.dz
    pairing = (Ubar @ (ops.MU @ (state_np1.w - state_n.w))
               + Phibar @ (dz * (state_np1.rho - state_n.rho))
               + Pibar @ (dz * (state_np1.Theta - state_n.Theta)))
    return float(H_np1 - H_n - pairing)


def compute_budget(state, grid: VerticalGrid, consts: GasConstants,
                   powers: Tuple[float, float, float] = (0.0, 0.0, 0.0), step: int = 0) -> EnergyBudget:
    K, P, I = total_energy(state, grid, consts)
    return EnergyBudget(K=K, P=P, I=I, H=K + P + I, mass=column_mass(state.rho, grid),
                        dK_dt=powers[0], dP_dt=powers[1], dI_dt=powers[2], step=step)
