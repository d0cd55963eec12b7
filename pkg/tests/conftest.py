"""共享夹具：小网格、默认常数、离散静力平衡柱、随机状态"""

import numpy as np
import pytest

from core.config import ExperimentConfig
from dycore.balanced_integrator import ColumnState
from dycore.mimetic1d import build_grid
from dycore.thermo import GasConstants, diagnose_exner
from experiments.initial_conditions import init_bubble, init_hydrostatic_column


def gauss_cell_quadrature(grid, points: int = 3):
    """每层 Gauss–Legendre 节点与权重（展平）"""
    nodes, weights = np.polynomial.legendre.leggauss(points)
    zb = grid.z_interfaces[:-1][:, None]
    dz = grid.dz[:, None]
    z = zb + 0.5 * dz * (nodes[None, :] + 1.0)
    w = 0.5 * dz * weights[None, :]
    cells = np.repeat(np.arange(grid.n_levels), points)
    return z.ravel(), w.ravel(), cells


def gauss_path_quadrature(points: int = 3):
    """[0, 1] 上的 Gauss–Legendre 节点与权重，用于沿 n → k 线性路径积分"""
    nodes, weights = np.polynomial.legendre.leggauss(points)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def linear_field(grid, full_coefficients, z):
    """含边界界面系数的分片线性场在 z 处的值"""
    return np.interp(z, grid.z_interfaces, full_coefficients)


def hat(grid, j, z):
    """U⊥ 的第 j 个帽函数（位于第 j+1 个界面）"""
    e = np.zeros(grid.n_levels + 1)
    e[j + 1] = 1.0
    return linear_field(grid, e, z)


def random_column(grid, rng, consts=GasConstants(), amplitude=0.05, w_scale=1.0) -> ColumnState:
    """在近似静力平衡背景上加随机扰动的物理状态，Π 由状态方程诊断"""
    z = grid.z_mid
    Pi0 = consts.cp * (1.0 - consts.g * z / (consts.cp * 300.0))
    Theta0 = (consts.p0 / consts.R) * (Pi0 / consts.cp) ** (consts.cv / consts.R)
    rho = Theta0 / 300.0 * (1.0 + amplitude * rng.uniform(-1, 1, grid.n_levels))
    Theta = Theta0 * (1.0 + amplitude * rng.uniform(-1, 1, grid.n_levels))
    w = w_scale * rng.standard_normal(grid.n_u)
    return ColumnState(grid, w, rho, Theta, diagnose_exner(Theta, consts))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def consts():
    return GasConstants()


@pytest.fixture
def small_grid():
    return build_grid(6, 1500.0)


@pytest.fixture
def stretched_grid():
    return build_grid(7, 1500.0, stretching=[1.0, 1.3, 0.7, 2.0, 1.1, 0.9, 1.5])


@pytest.fixture
def small_config():
    return ExperimentConfig(n_levels=20, n_steps=5, include_w_in_criteria=False)


@pytest.fixture
def hydrostatic_column(small_config):
    return init_hydrostatic_column(small_config)


@pytest.fixture
def bubble_column():
    return init_bubble(ExperimentConfig(n_levels=30, include_w_in_criteria=False))
