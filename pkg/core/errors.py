"""BalCol 统一异常定义

所有求解器、配置与输出错误都继承 BalColError，携带机器可读的错误码，
CLI 根据错误码映射进程退出码。
"""

from typing import Any, Dict, Optional


class BalColError(Exception):
    """BalCol 异常基类"""
    code = "error"
    exit_code = 1

    def __init__(self, message: str, context: Optional[Dict[str, Any]] = None,
                 column: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.context = dict(context or {})
        self.column = column

    def with_column(self, column: int) -> "BalColError":
        """标记出错的列编号（HEVI 并行映射中使用）"""
        self.column = column
        self.context["column"] = column
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = {"code": self.code, "message": self.message}
        if self.column is not None:
            data["column"] = self.column
        if self.context:
            data["context"] = self.context
        return data

    def __str__(self) -> str:
        if self.column is not None:
            return f"[{self.code}] 第 {self.column} 列: {self.message}"
        return f"[{self.code}] {self.message}"


class ConfigError(BalColError):
    """配置文件或命令行覆盖项非法"""
    code = "invalid-config"
    exit_code = 2


class InvalidArgument(BalColError):
    """函数参数非法（网格尺寸、场长度、几何位置等）"""
    code = "invalid-argument"
    exit_code = 2


class NonConvergence(BalColError):
    """Newton 迭代在最大迭代次数内未收敛，report 为最后一次的迭代报告"""
    code = "non-convergence"
    exit_code = 3

    def __init__(self, message: str, report: Any = None, **kwargs):
        super().__init__(message, **kwargs)
        self.report = report


class SolverBreakdown(BalColError):
    """线性代数失败：Helmholtz 算子奇异、质量矩阵不可分解等"""
    code = "solver-breakdown"
    exit_code = 3


class NonphysicalState(BalColError):
    """出现非物理状态：ρ、Θ 或 Π 非正"""
    code = "nonphysical-state"
    exit_code = 4


class OutputError(BalColError):
    """CSV/元数据写出失败"""
    code = "io"
    exit_code = 5


def exit_code_for(exc: BaseException) -> int:
    """异常 → CLI 退出码；未知异常返回 1"""
    if isinstance(exc, BalColError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return OutputError.exit_code
    return 1
