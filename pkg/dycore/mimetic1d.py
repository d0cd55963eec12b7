"""最低阶拟态（mimetic）垂直函数空间与单列矩阵组装

三个离散空间：
  Q  : 分片常数，每层一个点值系数，n 个自由度（ρ、Θ、Π、Φ）
  U⊥ : 内部界面上的帽函数（两端齐次 Dirichlet），n−1 个自由度（w、U、P）
  θ  : 含边界的全部界面帽函数，n+1 个自由度

所有单元积分都是次数 ≤ 3 的多项式，按闭式逐层精确计算，不做数值积分。
"""

import dataclasses
import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sps

from core.errors import InvalidArgument, NonphysicalState

logger = logging.getLogger("BalCol-Solver")


@dataclasses.dataclass(frozen=True, eq=False)
class VerticalGrid:
    """单列垂直网格"""
    n_levels: int
    z_interfaces: np.ndarray
    dz: np.ndarray

    @property
    def n_u(self) -> int:
        """U⊥ 空间自由度数"""
        return self.n_levels - 1

    @property
    def z_top(self) -> float:
        return float(self.z_interfaces[-1])

    @property
    def z_mid(self) -> np.ndarray:
        """层中点高度（z 在 Q 上的投影系数）"""
        return 0.5 * (self.z_interfaces[:-1] + self.z_interfaces[1:])


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


def build_grid(n_levels: int, z_top: float,
               stretching: Optional[Union[Callable[[np.ndarray], np.ndarray], Sequence[float]]] = None) -> VerticalGrid:
    """构建垂直网格

    stretching 可以是单调映射 f: [0,1] → [0,1]（作用于均匀参数 s），
    也可以是 n_levels 个正的相对层厚权重；默认均匀分层。
    """
    if isinstance(n_levels, bool) or int(n_levels) != n_levels or n_levels < 1:
        raise InvalidArgument(f"n_levels 必须为正整数，收到 {n_levels!r}")
    n_levels = int(n_levels)
    if not np.isfinite(z_top) or z_top <= 0:
        raise InvalidArgument(f"z_top 必须为正数，收到 {z_top!r}")

    if stretching is None:
        z = np.linspace(0.0, float(z_top), n_levels + 1)
    elif callable(stretching):
        s = np.linspace(0.0, 1.0, n_levels + 1)
        z = float(z_top) * np.asarray(stretching(s), dtype=np.float64)
        z[0], z[-1] = 0.0, float(z_top)
    else:
        weights = np.asarray(stretching, dtype=np.float64)
        if weights.shape != (n_levels,) or np.any(weights <= 0):
            raise InvalidArgument("拉伸权重必须是 n_levels 个正数")
        z = float(z_top) * np.concatenate(([0.0], np.cumsum(weights) / weights.sum()))
        z[-1] = float(z_top)

    dz = np.diff(z)
    if np.any(~np.isfinite(z)) or np.any(dz <= 0):
        raise InvalidArgument("界面高度必须严格递增")
    return VerticalGrid(n_levels=n_levels, z_interfaces=_readonly(z), dz=_readonly(dz))


def check_field(values, grid: VerticalGrid, kind: str, name: str = "field") -> np.ndarray:
    """检查场长度：kind ∈ {'Q', 'U', 'Theta'}，返回 float64 数组"""
    expected = {"Q": grid.n_levels, "U": grid.n_u, "Theta": grid.n_levels + 1}[kind]
    array = np.asarray(values, dtype=np.float64)
    if array.ndim != 1 or array.shape[0] != expected:
        raise InvalidArgument(f"{name} 长度应为 {expected}（{kind} 空间），实际形状 {array.shape}")
    return array


def _cell_indices(grid: VerticalGrid):
    """每层底/顶界面在 U⊥ 中的编号，边界界面为 −1"""
    n = grid.n_levels
    cells = np.arange(n)
    bottom = cells - 1
    top = cells.copy()
    top[n - 1] = -1
    return cells, bottom, top


def _assemble_pair(grid: VerticalGrid, bb: np.ndarray, bt: np.ndarray, tt: np.ndarray,
                   interior: bool) -> sps.csr_matrix:
    """由逐层 2×2 局部矩阵组装对称三对角矩阵

    interior=True 组装 U⊥（去掉边界界面），否则组装含边界的全部界面空间。
    """
    n = grid.n_levels
    if interior:
        size = n - 1
        cells, bottom, top = _cell_indices(grid)
    else:
        size = n + 1
        cells = np.arange(n)
        bottom, top = cells, cells + 1
    rows, cols, vals = [], [], []
    has_b = bottom >= 0
    has_t = top >= 0
    both = has_b & has_t
    rows += [bottom[has_b], top[has_t], bottom[both], top[both]]
    cols += [bottom[has_b], top[has_t], top[both], bottom[both]]
    vals += [bb[has_b], tt[has_t], bt[both], bt[both]]
    return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(size, size))


def build_incidence(grid: VerticalGrid) -> sps.csr_matrix:
    """拓扑关联矩阵 E32（n × (n−1)）：第 i 行在顶界面处 +1、底界面处 −1"""
    cells, bottom, top = _cell_indices(grid)
    has_b = bottom >= 0
    has_t = top >= 0
    rows = np.concatenate((cells[has_t], cells[has_b]))
    cols = np.concatenate((top[has_t], bottom[has_b]))
    vals = np.concatenate((np.ones(has_t.sum()), -np.ones(has_b.sum())))
    return sps.csr_matrix((vals, (rows, cols)), shape=(grid.n_levels, grid.n_u))


def assemble_mass_Q(grid: VerticalGrid) -> sps.csr_matrix:
    return sps.diags(grid.dz, 0, shape=(grid.n_levels, grid.n_levels), format="csr")


def assemble_strong_divergence(grid: VerticalGrid) -> sps.csr_matrix:
    """点值基下的强散度 div = MQ⁻¹·E32，满足 MQ·div = E32"""
    return sps.diags(1.0 / grid.dz, 0, format="csr") @ build_incidence(grid)


def assemble_mass_U(grid: VerticalGrid) -> sps.csr_matrix:
    """U⊥ 质量矩阵：对角 (dz_{j−1}+dz_j)/3，副对角 dz_j/6；单层时为 0×0"""
    return assemble_weighted_N(grid, np.ones(grid.n_levels))


def assemble_weighted_N(grid: VerticalGrid, rho) -> sps.csr_matrix:
    """ρ 加权 U⊥ 质量矩阵 ⟨ρ_h φ_i, φ_j⟩"""
    rho = check_field(rho, grid, "Q", "rho")
    h = grid.dz * rho
    return _assemble_pair(grid, h / 3.0, h / 6.0, h / 3.0, interior=True)


def assemble_weighted_N_full(grid: VerticalGrid, rho) -> sps.csr_matrix:
    """含边界界面的 ρ 加权质量矩阵，(n+1)×(n+1)，用于 θ 诊断"""
    rho = check_field(rho, grid, "Q", "rho")
    h = grid.dz * rho
    return _assemble_pair(grid, h / 3.0, h / 6.0, h / 3.0, interior=False)


def assemble_weighted_S(grid: VerticalGrid, theta) -> sps.csr_matrix:
    """θ 加权 U⊥ 质量矩阵 ⟨θ_h φ_i, φ_j⟩，θ_h 分片线性，三个线性函数乘积逐层精确积分"""
    theta = check_field(theta, grid, "Theta", "theta")
    h = grid.dz
    tb, tt_ = theta[:-1], theta[1:]
    bb = h * (tb / 4.0 + tt_ / 12.0)
    bt = h * (tb + tt_) / 12.0
    tt = h * (tb / 12.0 + tt_ / 4.0)
    return _assemble_pair(grid, bb, bt, tt, interior=True)


def assemble_weighted_T(grid: VerticalGrid, w) -> sps.csr_matrix:
    """T(w)，n×(n−1)：(i, j) = ∫_cell i ½ w_h φ_j dz"""
    w = check_field(w, grid, "U", "w")
    n = grid.n_levels
    w_full = np.concatenate(([0.0], w, [0.0]))
    wb, wt = w_full[:-1], w_full[1:]
    half_h = 0.5 * grid.dz
    to_bottom = half_h * (wb / 3.0 + wt / 6.0)
    to_top = half_h * (wb / 6.0 + wt / 3.0)
    cells, bottom, top = _cell_indices(grid)
    has_b = bottom >= 0
    has_t = top >= 0
    rows = np.concatenate((cells[has_b], cells[has_t]))
    cols = np.concatenate((bottom[has_b], top[has_t]))
    vals = np.concatenate((to_bottom[has_b], to_top[has_t]))
    return sps.csr_matrix((vals, (rows, cols)), shape=(n, grid.n_u))


def assemble_weighted_L(grid: VerticalGrid, p) -> sps.csr_matrix:
    """⟨ε^Q_i, p_h φ_a⟩ 的 (n−1)×n 形式，等于 2·T(p)ᵀ"""
    return (2.0 * assemble_weighted_T(grid, p)).T.tocsr()


def assemble_L_UQ(grid: VerticalGrid) -> sps.csr_matrix:
    """Q 基与含边界线性基的配对矩阵，(n+1)×n：(j, i) = ∫_cell i φ_j dz"""
    n = grid.n_levels
    cells = np.arange(n)
    half = 0.5 * grid.dz
    rows = np.concatenate((cells, cells + 1))
    cols = np.concatenate((cells, cells))
    return sps.csr_matrix((np.concatenate((half, half)), (rows, cols)), shape=(n + 1, n))


def symmetric_banded(matrix: sps.spmatrix) -> np.ndarray:
    """对称三对角矩阵 → solveh_banded 的上带存储"""
    m = matrix.shape[0]
    ab = np.zeros((2, m))
    if m > 1:
        ab[0, 1:] = matrix.diagonal(1)
    ab[1, :] = matrix.diagonal(0)
    return ab


def solveh_tridiagonal(ab: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """上带存储的对称正定三对角求解；只有一个自由度时直接除以对角元"""
    if ab.shape[1] == 1:
        diagonal = ab[1, 0]
        if not diagonal > 0.0:
            raise np.linalg.LinAlgError(f"1×1 矩阵非正定: {diagonal}")
        return rhs / diagonal
    return scipy.linalg.solveh_banded(ab, rhs)


def solve_symmetric_tridiagonal(matrix: sps.spmatrix, rhs: np.ndarray) -> np.ndarray:
    """对称正定三对角求解；矩阵非正定时抛出 NonphysicalState"""
    rhs = np.asarray(rhs, dtype=np.float64)
    if matrix.shape[0] == 0:
        return np.zeros_like(rhs)
    try:
        return solveh_tridiagonal(symmetric_banded(matrix), rhs)
    except np.linalg.LinAlgError as e:
        raise NonphysicalState(f"加权质量矩阵非正定: {e}")


@dataclasses.dataclass(frozen=True, eq=False)
class OperatorSet:
    """一列在某个线性化状态上的全部组装矩阵

    与状态无关的矩阵（MQ、MU、E32、div、L_UQ）在 at_state 之间共享；
    N_rho、S_theta、T_u 只有在对应场给出时才组装。
    """
    grid: VerticalGrid
    MQ: sps.csr_matrix
    MU: sps.csr_matrix
    E32: sps.csr_matrix
    div: sps.csr_matrix
    L_UQ: sps.csr_matrix
    mu_banded: np.ndarray
    grad_q: np.ndarray
    N_rho: Optional[sps.csr_matrix] = None
    S_theta: Optional[sps.csr_matrix] = None
    T_u: Optional[sps.csr_matrix] = None

    def solve_mu(self, rhs: np.ndarray) -> np.ndarray:
        """MU⁻¹·rhs（rhs 可以是向量或矩阵）"""
        rhs = np.asarray(rhs, dtype=np.float64)
        if self.grid.n_u == 0:
            return np.zeros_like(rhs)
        return solveh_tridiagonal(self.mu_banded, rhs)

    def at_state(self, rho=None, theta=None, w=None) -> "OperatorSet":
        """复用静态矩阵，组装给定状态的加权矩阵"""
        return dataclasses.replace(
            self,
            N_rho=assemble_weighted_N(self.grid, rho) if rho is not None else None,
            S_theta=assemble_weighted_S(self.grid, theta) if theta is not None else None,
            T_u=assemble_weighted_T(self.grid, w) if w is not None else None,
        )


def assemble_operators(grid: VerticalGrid, rho=None, theta=None, w=None) -> OperatorSet:
    """组装一列的 OperatorSet"""
    MU = assemble_mass_U(grid)
    E32 = build_incidence(grid)
    mu_banded = symmetric_banded(MU)
    if grid.n_u > 0:
        # MU⁻¹·E32ᵀ：把 Q 上的场映射为 U⊥ 上的（负）梯度
        grad_q = solveh_tridiagonal(mu_banded, E32.T.toarray())
    else:
        grad_q = np.zeros((0, grid.n_levels))
    base = OperatorSet(
        grid=grid,
        MQ=assemble_mass_Q(grid),
        MU=MU,
        E32=E32,
        div=assemble_strong_divergence(grid),
        L_UQ=assemble_L_UQ(grid),
        mu_banded=mu_banded,
        grad_q=grad_q,
    )
    if rho is None and theta is None and w is None:
        return base
    return base.at_state(rho=rho, theta=theta, w=w)
