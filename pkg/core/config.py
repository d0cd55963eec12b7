import dataclasses
from typing import Any, Callable, Dict, Mapping, Optional, Tuple

from core.config_manager import config_manager, ConfigItem, format_value
from core.errors import ConfigError, OutputError

EXPERIMENTS = ("hydrostatic-column", "bubble-column", "bubble-slice", "tolerance-sweep", "cn-compare")
INTEGRATORS = ("balanced", "crank-nicolson")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _positive(x) -> bool:
    return x > 0


def _non_negative(x) -> bool:
    return x >= 0


def _at_least_one(x) -> bool:
    return x >= 1


def _parse_tolerances(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.split(',') if part.strip())


def _valid_tolerances(text: str) -> bool:
    tolerances = _parse_tolerances(text)
    return len(tolerances) > 0 and all(t > 0 for t in tolerances)


def setting(default: Any, description: str, validate: Optional[Callable[[Any], bool]] = None):
    """ExperimentConfig 字段：默认值、说明与校验只在这里写一次，注册配置项时读取"""
    return dataclasses.field(default=default, metadata={"description": description, "validate": validate})


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """一次实验运行的完整配置（不可变，可在线程间传递）"""
    experiment: str = setting("hydrostatic-column", "实验预设名称", lambda x: x in EXPERIMENTS)
    n_levels: int = setting(150, "垂直层数（Q 空间自由度）", _at_least_one)
    z_top: float = setting(1500.0, "模式顶高度 [m]", _positive)
    n_columns: int = setting(16, "x-z 切片的水平列数（周期）", _at_least_one)
    dx: float = setting(62.5, "切片水平间距 [m]", _positive)
    dt: float = setting(1.0, "时间步长 [s]", _positive)
    n_steps: int = setting(400, "时间步数", _at_least_one)
    tolerance: float = setting(1e-8, "Newton 相对更新收敛阈值", _positive)
    max_iterations: int = setting(40, "Newton 最大迭代次数", _at_least_one)
    include_w_in_criteria: bool = setting(False, "收敛判据是否包含 w 的相对更新（纯垂直实验建议关闭）")
    integrator: str = setting("balanced", "垂直隐式积分器：balanced 或 crank-nicolson",
                              lambda x: x in INTEGRATORS)
    accept_nonconverged: bool = setting(False, "未收敛时接受最后一次迭代（宽松容差扫描用）")
    theta0: float = setting(300.0, "背景位温 θ₀ [K]", _positive)
    bubble_amplitude: float = setting(0.25, "暖泡振幅系数，θ' = A(1 + cos(πr/r₀))", _non_negative)
    bubble_r0: float = setting(250.0, "暖泡半径 r₀ [m]", _positive)
    bubble_zc: float = setting(350.0, "暖泡中心高度 [m]", _positive)
    bubble_xc: float = setting(500.0, "暖泡中心水平位置 [m]（切片模式）", _non_negative)
    cp: float = setting(1004.5, "定压比热 [J kg⁻¹ K⁻¹]", _positive)
    cv: float = setting(717.5, "定容比热 [J kg⁻¹ K⁻¹]，R = cp − cv", _positive)
    p0: float = setting(100000.0, "参考气压 [Pa]", _positive)
    g: float = setting(9.80616, "重力加速度 [m s⁻²]", _positive)
    rayleigh: bool = setting(False, "模式顶三层 Rayleigh 阻尼")
    viscosity_factor: float = setting(1.0, "水平双调和粘性系数缩放，ν = factor·0.072·dx^3.2", _non_negative)
    threads: int = setting(0, "逐列求解线程数，0 表示可用 CPU 数", _non_negative)
    sweep_tolerances: str = setting("1e-6,1e-8,1e-10,1e-12,1e-14", "容差扫描列表（逗号分隔）", _valid_tolerances)
    output: str = setting("ledger.csv", "CSV 输出路径")
    log_level: str = setting("INFO", "日志级别", lambda x: x in LOG_LEVELS)
    structured_logs: bool = setting(False, "文件日志使用 JSON 结构化格式")
    log_dir: str = setting("logs", "日志目录")
    verify_schur: bool = setting(False, "每次 Newton 迭代用整体块 LU 校验 Schur 解（仅小网格）")
    log_every: int = setting(50, "每隔多少步输出一次步摘要日志", _at_least_one)

    def echo(self) -> Dict[str, Any]:
        """配置回显（写入账本元数据）"""
        return dataclasses.asdict(self)

    @classmethod
    def from_echo(cls, echo: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(echo) - known)
        if unknown:
            raise ConfigError(f"未知配置键 {unknown}", context={"unknown": unknown})
        return cls(**dict(echo))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def tolerances(self) -> Tuple[float, ...]:
        return _parse_tolerances(self.sweep_tolerances)

    def write_echo(self, path: str) -> None:
        """以 key = value 格式写出配置回显，可直接作为 --config 再次使用"""
        lines = [f"{key} = {format_value(value)}" for key, value in self.echo().items()]
        try:
            with open(path, 'w', encoding='utf-8', newline='\n') as f:
                f.write("\n".join(lines) + "\n")
        except OSError as e:
            raise OutputError(f"写出配置回显失败 {path}: {e}", context={"path": path})


def load_experiment_config(path: Optional[str] = None,
                           overrides: Optional[Mapping[str, Any]] = None,
                           experiment_defaults: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """读取配置文件 + 环境变量 + 命令行覆盖，返回 ExperimentConfig"""
    values = config_manager.load(path, overrides=overrides, experiment_defaults=experiment_defaults)
    return ExperimentConfig.from_echo(values)


# 按字段顺序注册实验配置项
for _field in dataclasses.fields(ExperimentConfig):
    config_manager.register_config(ConfigItem(
        key=_field.name,
        default=_field.default,
        description=_field.metadata["description"],
        validate_func=_field.metadata["validate"],
    ))
