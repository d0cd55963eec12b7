"""能量平衡的拟 Newton 垂直隐式求解

每个 Newton 迭代：残差 → 近似 Jacobian 块 → 两次 Schur 消元得到 Θ 的 Helmholtz 方程
→ 回代 δΠ、δw、δρ → 单位步长更新。Crank–Nicolson 基线共用同一循环，
只是把时间平均变分导数换成 n、k 两端各取一半的中点值。

Q 系数为点值，强散度 div = MQ⁻¹·E32，因此 MQ·div = E32、divᵀ·MQ = E32ᵀ。

Helmholtz 算子不是带状的：MU 是一致（未集中）质量矩阵，MU⁻¹ 稠密，
所以 n×n 的 Helmholtz 算子整体稠密，用稠密 LU 分解并检查零主元；
正确性由与整体块矩阵直接求解的比对保证，而不是带宽断言。
"""

import dataclasses
import functools
import logging
import warnings
from typing import List, NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg

from core.errors import InvalidArgument, NonConvergence, NonphysicalState, SolverBreakdown
from core.logger_manager import logger_manager
from dycore.mimetic1d import (
    OperatorSet,
    VerticalGrid,
    assemble_operators,
    assemble_weighted_L,
    assemble_weighted_N,
    assemble_weighted_S,
    assemble_weighted_T,
    check_field,
)
from dycore.thermo import (
    GasConstants,
    averaged_variational_derivatives,
    chain_rule_residual,
    diagnose_theta,
    midpoint_variational_derivatives,
    power_exchanges,
)

logger = logging.getLogger("BalCol-Solver")

SCHEMES = ("balanced", "crank-nicolson")
VERIFY_SCHUR_MAX_LEVELS = 16
VERIFY_SCHUR_TOLERANCE = 1e-10


@dataclasses.dataclass(frozen=True, eq=False)
class ColumnState:
    """一列的预报量 (w, ρ, Θ, Π)"""
    grid: VerticalGrid
    w: np.ndarray
    rho: np.ndarray
    Theta: np.ndarray
    Pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", check_field(self.w, self.grid, "U", "w"))
        object.__setattr__(self, "rho", check_field(self.rho, self.grid, "Q", "rho"))
        object.__setattr__(self, "Theta", check_field(self.Theta, self.grid, "Q", "Theta"))
        object.__setattr__(self, "Pi", check_field(self.Pi, self.grid, "Q", "Pi"))

    def replace(self, **changes) -> "ColumnState":
        return dataclasses.replace(self, **changes)

    def is_physical(self) -> bool:
        return bool(np.all(self.rho > 0) and np.all(self.Theta > 0) and np.all(self.Pi > 0)
                    and np.all(np.isfinite(self.w)))

    def check_physical(self) -> None:
        if not self.is_physical():
            raise NonphysicalState(
                "ρ、Θ、Π 必须处处为正且 w 有限",
                context={
                    "min_rho": float(np.min(self.rho)),
                    "min_Theta": float(np.min(self.Theta)),
                    "min_Pi": float(np.min(self.Pi)),
                },
            )

    def identical_to(self, other: "ColumnState") -> bool:
        """逐位相等"""
        return all(np.array_equal(getattr(self, name), getattr(other, name))
                   for name in ("w", "rho", "Theta", "Pi"))


@dataclasses.dataclass(frozen=True)
class NewtonConfig:
    """Newton 迭代参数"""
    dt: float
    tolerance: float = 1e-8
    max_iterations: int = 40
    include_w_in_criteria: bool = True
    accept_nonconverged: bool = False
    verify_schur: bool = False
    consts: GasConstants = GasConstants()

    def __post_init__(self):
        if not np.isfinite(self.dt) or self.dt < 0:
            raise InvalidArgument(f"dt 必须非负，收到 {self.dt!r}")
        if not self.tolerance > 0:
            raise InvalidArgument(f"tolerance 必须为正，收到 {self.tolerance!r}")
        if self.max_iterations < 1:
            raise InvalidArgument(f"max_iterations 至少为 1，收到 {self.max_iterations!r}")


@dataclasses.dataclass
class NewtonReport:
    """一次隐式求解的迭代记录"""
    scheme: str = "balanced"
    iterations: int = 0
    update_norms: List[Tuple[float, float, float, float]] = dataclasses.field(default_factory=list)
    converged: bool = False
    powers: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    chain_rule_residual: float = 0.0
    residual_norm: float = 0.0

    @property
    def final_norms(self) -> Tuple[float, float, float, float]:
        """最后一次迭代的 (w, ρ, Θ, Π) 相对更新范数"""
        return self.update_norms[-1] if self.update_norms else (0.0, 0.0, 0.0, 0.0)

    def summary(self) -> dict:
        return {
            "scheme": self.scheme,
            "iterations": self.iterations,
            "converged": self.converged,
            "final_norms": list(self.final_norms),
        }


class Residuals(NamedTuple):
    F_u: np.ndarray
    F_rho: np.ndarray
    F_Theta: np.ndarray
    F_Pi: np.ndarray


class Updates(NamedTuple):
    dw: np.ndarray
    d_rho: np.ndarray
    d_Theta: np.ndarray
    d_Pi: np.ndarray


@dataclasses.dataclass(frozen=True, eq=False)
class JacobianBlocks:
    """近似 Jacobian 的 4×4 块（稠密数组）

    | Mu       0      G_Theta  G_Pi |   δw
    | D_rho    M_rho  0        0    |   δρ
    | D_Theta  Q      M_Theta  0    |   δΘ
    | 0        0      C_Theta  C_Pi |   δΠ
    """
    Mu: np.ndarray
    G_Theta: np.ndarray
    G_Pi: np.ndarray
    D_rho: np.ndarray
    M_rho: np.ndarray
    D_Theta: np.ndarray
    Q_Theta_rho: np.ndarray
    M_Theta: np.ndarray
    C_Theta: np.ndarray
    C_Pi: np.ndarray


class _Evaluation(NamedTuple):
    residuals: Residuals
    Ubar: np.ndarray
    Phibar: np.ndarray
    Pibar: np.ndarray
    S_hat: object
    theta_k: np.ndarray


@functools.lru_cache(maxsize=64)
def operators_for(grid: VerticalGrid) -> OperatorSet:
    """按网格缓存静态矩阵"""
    return assemble_operators(grid)


def _check_scheme(scheme: str) -> None:
    if scheme not in SCHEMES:
        raise InvalidArgument(f"未知积分方案 {scheme!r}，可选 {SCHEMES}")


def _log_terms(state: ColumnState, consts: GasConstants) -> np.ndarray:
    if np.any(~(state.Pi > 0)) or np.any(~(state.Theta > 0)):
        raise NonphysicalState("状态方程残差中 Π 或 Θ 非正",
                               context={"min_Pi": float(np.min(state.Pi)), "min_Theta": float(np.min(state.Theta))})
    kappa = consts.kappa
    return (np.log(state.Pi) - kappa * np.log(state.Theta)
            - np.log(consts.cp) - kappa * np.log(consts.R / consts.p0))


def _evaluate(state_n: ColumnState, state_k: ColumnState, config: NewtonConfig, ops: OperatorSet,
              ops_n: OperatorSet, theta_n: np.ndarray, coupling: Optional[np.ndarray],
              anchor: ColumnState, scheme: str) -> _Evaluation:
    grid = ops.grid
    consts = config.consts
    ops_k = ops.at_state(rho=state_k.rho, w=state_k.w)
    derivatives = averaged_variational_derivatives if scheme == "balanced" else midpoint_variational_derivatives
    Ubar, Phibar, Pibar = derivatives(state_n, state_k, ops_n, ops_k, consts)

    theta_k = diagnose_theta(state_k.Theta, state_k.rho, ops)
    S_hat = assemble_weighted_S(grid, 0.5 * (theta_n + theta_k))
    dt = config.dt
    dz = grid.dz

    F_u = (ops.MU @ (state_k.w - anchor.w)
           - dt * (ops.E32.T @ Phibar)
           - dt * (S_hat @ (ops.grad_q @ Pibar)))
    if coupling is not None:
        F_u = F_u + dt * check_field(coupling, grid, "U", "external_coupling")
    F_rho = dz * (state_k.rho - anchor.rho) + dt * (ops.E32 @ Ubar)
    F_Theta = dz * (state_k.Theta - anchor.Theta) + dt * (ops.E32 @ ops.solve_mu(S_hat @ Ubar))
    F_Pi = dz * _log_terms(state_k, consts)
    return _Evaluation(Residuals(F_u, F_rho, F_Theta, F_Pi), Ubar, Phibar, Pibar, S_hat, theta_k)


def residuals(state_n: ColumnState, state_k: ColumnState, config: NewtonConfig,
              ops: Optional[OperatorSet] = None, external_coupling=None,
              anchor: Optional[ColumnState] = None, scheme: str = "balanced") -> Residuals:
    """非线性残差 (F_u, F_ρ, F_Θ, F_Π)

    F_u = MU(wᵏ − w*) − Δt·E32ᵀΦ̄ − Δt·Ŝ·MU⁻¹·E32ᵀ·Π̄ + Δt·R
    F_ρ = MQ(ρᵏ − ρ*) + Δt·E32·Ū
    F_Θ = MQ(Θᵏ − Θ*) + Δt·E32·MU⁻¹·Ŝ·Ū
    F_Π = dz·[ln Πᵏ − (R/cv)ln Θᵏ − ln cp − (R/cv)ln(R/p0)]

    带 * 的量取自 anchor（默认 state_n）；HEVI 阶段用它承载显式水平倾向。
    """
    _check_scheme(scheme)
    ops = ops or operators_for(state_n.grid)
    theta_n = diagnose_theta(state_n.Theta, state_n.rho, ops)
    ops_n = ops.at_state(rho=state_n.rho, w=state_n.w)
    return _evaluate(state_n, state_k, config, ops, ops_n, theta_n, external_coupling,
                     anchor or state_n, scheme).residuals


def assemble_jacobian(state_k: ColumnState, state_n: ColumnState, config: NewtonConfig,
                      ops: Optional[OperatorSet] = None, theta_n: Optional[np.ndarray] = None,
                      theta_k: Optional[np.ndarray] = None) -> JacobianBlocks:
    """在时间中心状态 â = ½(aⁿ + aᵏ) 上组装近似 Jacobian 块"""
    ops = ops or operators_for(state_n.grid)
    grid = ops.grid
    consts = config.consts
    if theta_n is None:
        theta_n = diagnose_theta(state_n.Theta, state_n.rho, ops)
    if theta_k is None:
        theta_k = diagnose_theta(state_k.Theta, state_k.rho, ops)
    if np.any(~(state_k.Theta > 0)) or np.any(~(state_k.Pi > 0)):
        raise NonphysicalState("Jacobian 加权质量要求 Θ、Π 为正")

    h = 0.5 * config.dt
    dz = grid.dz
    rho_hat = 0.5 * (state_n.rho + state_k.rho)
    w_hat = 0.5 * (state_n.w + state_k.w)
    Theta_hat = 0.5 * (state_n.Theta + state_k.Theta)
    Pi_hat = 0.5 * (state_n.Pi + state_k.Pi)
    theta_hat = 0.5 * (theta_n + theta_k)
    if np.any(~(rho_hat > 0)):
        raise NonphysicalState("时间中心密度非正，ρ̂ 加权质量不可逆")

    N_hat = assemble_weighted_N(grid, rho_hat)
    S_hat = assemble_weighted_S(grid, theta_hat)
    T_hat = assemble_weighted_T(grid, w_hat)
    E32 = ops.E32.toarray()
    pressure_gradient = -(ops.grad_q @ Pi_hat)
    theta_cell = 0.5 * (theta_hat[:-1] + theta_hat[1:])

    G_Theta = h * assemble_weighted_L(grid, pressure_gradient).toarray() / rho_hat[None, :]
    G_Pi = -h * (S_hat @ ops.grad_q)
    D_rho = h * (E32 @ ops.solve_mu(N_hat.toarray()))
    D_Theta = h * Theta_hat[:, None] * E32
    Q_Theta_rho = h * 2.0 * (T_hat @ ops.grad_q) * theta_cell[None, :]

    return JacobianBlocks(
        Mu=ops.MU.toarray(),
        G_Theta=np.asarray(G_Theta),
        G_Pi=np.asarray(G_Pi),
        D_rho=np.asarray(D_rho),
        M_rho=np.diag(dz),
        D_Theta=np.asarray(D_Theta),
        Q_Theta_rho=np.asarray(Q_Theta_rho),
        M_Theta=np.diag(dz),
        C_Theta=np.diag(-consts.kappa * dz / state_k.Theta),
        C_Pi=np.diag(dz / state_k.Pi),
    )


class _BlockInverse:
    """对角块逐元素求逆，其余块做 LU 分解"""

    def __init__(self, block: np.ndarray, name: str):
        self.name = name
        block = np.asarray(block, dtype=np.float64)
        diagonal = np.diagonal(block).copy()
        if not np.any(block - np.diag(diagonal)):
            if np.any(diagonal == 0) or not np.all(np.isfinite(diagonal)):
                raise SolverBreakdown(f"{name} 块奇异")
            self.diagonal = diagonal
            self.lu = None
        else:
            self.diagonal = None
            self.lu = _lu(block, name)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self.diagonal is not None:
            if rhs.ndim == 1:
                return rhs / self.diagonal
            return rhs / self.diagonal[:, None]
        return scipy.linalg.lu_solve(self.lu, rhs)


def _lu(matrix: np.ndarray, name: str):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(matrix)
    except (ValueError, np.linalg.LinAlgError) as e:
        raise SolverBreakdown(f"{name} LU 分解失败: {e}")
    pivots = np.diagonal(lu)
    if np.any(pivots == 0) or not np.all(np.isfinite(lu)):
        raise SolverBreakdown(f"{name} 奇异（零主元）")
    return lu, piv


class _SpdInverse:
    """Mu 的 Cholesky 分解；0 维时为空操作"""

    def __init__(self, block: np.ndarray):
        self.size = block.shape[0]
        if self.size:
            try:
                self.factor = scipy.linalg.cho_factor(block)
            except np.linalg.LinAlgError as e:
                raise SolverBreakdown(f"Mu 非正定: {e}")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if not self.size:
            return np.zeros_like(rhs)
        return scipy.linalg.cho_solve(self.factor, rhs)


def helmholtz_operator(blocks: JacobianBlocks) -> np.ndarray:
    """M_Θ − (D_Θ − Q M_ρ⁻¹ D_ρ)·Mu⁻¹·(G_Θ − G_Π C_Π⁻¹ C_Θ)"""
    Mu = _SpdInverse(blocks.Mu)
    M_rho = _BlockInverse(blocks.M_rho, "M_rho")
    C_Pi = _BlockInverse(blocks.C_Pi, "C_Pi")
    A = blocks.D_Theta - blocks.Q_Theta_rho @ M_rho.solve(blocks.D_rho)
    B = blocks.G_Theta - blocks.G_Pi @ C_Pi.solve(blocks.C_Theta)
    return blocks.M_Theta - A @ Mu.solve(B)


def schur_solve(blocks: JacobianBlocks, residuals: Residuals) -> Updates:
    """消去 δρ、δΠ、δw 得到 δΘ 的 Helmholtz 方程，LU 求解后回代"""
    F_u, F_rho, F_Theta, F_Pi = residuals
    Mu = _SpdInverse(blocks.Mu)
    M_rho = _BlockInverse(blocks.M_rho, "M_rho")
    C_Pi = _BlockInverse(blocks.C_Pi, "C_Pi")

    A = blocks.D_Theta - blocks.Q_Theta_rho @ M_rho.solve(blocks.D_rho)
    B = blocks.G_Theta - blocks.G_Pi @ C_Pi.solve(blocks.C_Theta)
    F_u_reduced = F_u - blocks.G_Pi @ C_Pi.solve(F_Pi)

    helmholtz = blocks.M_Theta - A @ Mu.solve(B)
    rhs = -(F_Theta - blocks.Q_Theta_rho @ M_rho.solve(F_rho) - A @ Mu.solve(F_u_reduced))
    d_Theta = scipy.linalg.lu_solve(_lu(helmholtz, "Helmholtz 算子"), rhs)

    d_Pi = -C_Pi.solve(F_Pi + blocks.C_Theta @ d_Theta)
    dw = -Mu.solve(F_u + blocks.G_Theta @ d_Theta + blocks.G_Pi @ d_Pi)
    d_rho = -M_rho.solve(F_rho + blocks.D_rho @ dw)
    updates = Updates(dw, d_rho, d_Theta, d_Pi)
    if not all(np.all(np.isfinite(u)) for u in updates):
        raise SolverBreakdown("Schur 回代产生非有限值")
    return updates


def monolithic_matrix(blocks: JacobianBlocks) -> np.ndarray:
    """拼出整体 4×4 块矩阵（稠密，用于校验）"""
    n_u = blocks.Mu.shape[0]
    n = blocks.M_rho.shape[0]
    zero_uq = np.zeros((n_u, n))
    zero_qu = np.zeros((n, n_u))
    zero_qq = np.zeros((n, n))
    return np.block([
        [blocks.Mu, zero_uq, blocks.G_Theta, blocks.G_Pi],
        [blocks.D_rho, blocks.M_rho, zero_qq, zero_qq],
        [blocks.D_Theta, blocks.Q_Theta_rho, blocks.M_Theta, zero_qq],
        [zero_qu, zero_qq, blocks.C_Theta, blocks.C_Pi],
    ])


def monolithic_solve(blocks: JacobianBlocks, residuals: Residuals) -> Updates:
    """整体稠密 LU 求解 J·δ = −F"""
    n_u = blocks.Mu.shape[0]
    n = blocks.M_rho.shape[0]
    rhs = -np.concatenate(residuals)
    delta = scipy.linalg.lu_solve(_lu(monolithic_matrix(blocks), "整体 Jacobian"), rhs)
    return Updates(delta[:n_u], delta[n_u:n_u + n], delta[n_u + n:n_u + 2 * n], delta[n_u + 2 * n:])


def _relative_discrepancy(a: Updates, b: Updates) -> float:
    worst = 0.0
    for x, y in zip(a, b):
        scale = max(np.linalg.norm(y), 1e-300)
        worst = max(worst, float(np.linalg.norm(x - y)) / scale if y.size else 0.0)
    return worst


def _relative_norm(delta: np.ndarray, value: np.ndarray) -> float:
    denominator = np.linalg.norm(value)
    if denominator < 1e-300:
        return 0.0
    return float(np.linalg.norm(delta) / denominator)


def _is_converged(norms: Tuple[float, float, float, float], config: NewtonConfig) -> bool:
    active = norms if config.include_w_in_criteria else norms[1:]
    return all(value <= config.tolerance for value in active)


def newton_solve(state_n: ColumnState, config: NewtonConfig, external_coupling=None, *,
                 anchor: Optional[ColumnState] = None, ops: Optional[OperatorSet] = None,
                 scheme: str = "balanced", column: Optional[int] = None) -> Tuple[ColumnState, NewtonReport]:
    """拟 Newton 迭代直到所有启用的相对更新范数 ≤ tolerance

    迭代初值取 anchor（默认 state_n）。达到 max_iterations 仍未收敛时抛出
    NonConvergence（携带 report），除非 config.accept_nonconverged。
    """
    _check_scheme(scheme)
    state_n.check_physical()
    ops = ops or operators_for(state_n.grid)
    anchor = anchor or state_n
    if external_coupling is not None:
        external_coupling = check_field(external_coupling, state_n.grid, "U", "external_coupling")
    context = {"column": column, "scheme": scheme}

    theta_n = diagnose_theta(state_n.Theta, state_n.rho, ops)
    ops_n = ops.at_state(rho=state_n.rho, w=state_n.w)
    report = NewtonReport(scheme=scheme)
    state_k = anchor
    verify = config.verify_schur and state_n.grid.n_levels <= VERIFY_SCHUR_MAX_LEVELS

    for iteration in range(1, config.max_iterations + 1):
        evaluation = _evaluate(state_n, state_k, config, ops, ops_n, theta_n, external_coupling, anchor, scheme)
        blocks = assemble_jacobian(state_k, state_n, config, ops, theta_n=theta_n, theta_k=evaluation.theta_k)
        updates = schur_solve(blocks, evaluation.residuals)
        if verify:
            discrepancy = _relative_discrepancy(updates, monolithic_solve(blocks, evaluation.residuals))
            if discrepancy > VERIFY_SCHUR_TOLERANCE:
                raise SolverBreakdown(f"Schur 解与整体解偏差 {discrepancy:.3e}",
                                      context={**context, "iteration": iteration}, column=column)

        state_k = state_k.replace(
            w=state_k.w + updates.dw,
            rho=state_k.rho + updates.d_rho,
            Theta=state_k.Theta + updates.d_Theta,
            Pi=state_k.Pi + updates.d_Pi,
        )
        if not state_k.is_physical():
            logger_manager.log_with_context(logger, logging.ERROR, "❌ Newton 迭代出现非物理状态",
                                            {**context, "iteration": iteration})
            state_k.check_physical()

        norms = (
            _relative_norm(updates.dw, state_k.w),
            _relative_norm(updates.d_rho, state_k.rho),
            _relative_norm(updates.d_Theta, state_k.Theta),
            _relative_norm(updates.d_Pi, state_k.Pi),
        )
        report.update_norms.append(norms)
        report.iterations = iteration
        logger.debug("Newton %s 第 %d 次迭代: |δw|=%.3e |δρ|=%.3e |δΘ|=%.3e |δΠ|=%.3e",
                     scheme, iteration, *norms)
        if _is_converged(norms, config):
            report.converged = True
            break

    if not report.converged:
        if config.accept_nonconverged:
            logger_manager.log_with_context(logger, logging.WARNING,
                                            "⚠️ Newton 未收敛，接受最后一次迭代",
                                            {**context, "iterations": report.iterations,
                                             "final_norms": list(report.final_norms)})
        else:
            logger_manager.log_with_context(logger, logging.ERROR, "❌ Newton 未收敛",
                                            {**context, "iterations": report.iterations,
                                             "final_norms": list(report.final_norms)})
            raise NonConvergence(f"{config.max_iterations} 次迭代内未收敛", report=report,
                                 context={**context, "final_norms": list(report.final_norms)},
                                 column=column)

    final = _evaluate(state_n, state_k, config, ops, ops_n, theta_n, external_coupling, anchor, scheme)
    centred = dataclasses.replace(ops, S_theta=final.S_hat)
    report.powers = power_exchanges(final.Ubar, final.Phibar, final.Pibar, centred, config.consts)
    report.chain_rule_residual = chain_rule_residual(state_n, state_k, final.Ubar, final.Phibar,
                                                     final.Pibar, ops)
    report.residual_norm = float(np.linalg.norm(np.concatenate(final.residuals)))
    return state_k, report


def crank_nicolson_solve(state_n: ColumnState, config: NewtonConfig, external_coupling=None,
                         **kwargs) -> Tuple[ColumnState, NewtonReport]:
    """Crank–Nicolson 基线：去掉交叉项的同一 Newton 循环"""
    return newton_solve(state_n, config, external_coupling, scheme="crank-nicolson", **kwargs)


def solve_column(state_n: ColumnState, config: NewtonConfig, integrator: str = "balanced",
                 external_coupling=None, **kwargs) -> Tuple[ColumnState, NewtonReport]:
    """按名称分派积分器"""
    if integrator in ("cn", "crank-nicolson"):
        return crank_nicolson_solve(state_n, config, external_coupling, **kwargs)
    if integrator == "balanced":
        return newton_solve(state_n, config, external_coupling, **kwargs)
    raise InvalidArgument(f"未知积分器 {integrator!r}")
