import os
import logging
from typing import Dict, Any, Optional, TypeVar, Generic, Callable, Mapping

from core.errors import ConfigError

# 环境变量前缀
ENV_PREFIX = "BALCOL_"

# 配置类型定义
T = TypeVar('T')

_TRUE_WORDS = ('true', '1', 'yes', 'y', 'on')
_FALSE_WORDS = ('false', '0', 'no', 'n', 'off')


class ConfigItem(Generic[T]):
    """配置项类，支持类型转换和验证"""
    def __init__(self, key: str, default: T, description: str = '', required: bool = False,
                 env_var: Optional[str] = None, validate_func: Optional[Callable[[Any], bool]] = None):
        self.key = key
        self.default = default
        self.description = description
        self.required = required
        self.env_var = env_var or f"{ENV_PREFIX}{key.upper()}"
        self.validate_func = validate_func
        self.value: Optional[T] = None

    def validate(self, value: Any) -> bool:
        """验证配置值是否合法"""
        if self.validate_func:
            try:
                return bool(self.validate_func(value))
            except Exception:
                return False
        return True

    def convert(self, raw: Any, source: str) -> T:
        """按默认值的类型转换原始值（文件/环境变量/命令行里都是字符串）"""
        if not isinstance(raw, str):
            return raw
        text = raw.strip()
        try:
            if isinstance(self.default, bool):
                lowered = text.lower()
                if lowered in _TRUE_WORDS:
                    return True
                if lowered in _FALSE_WORDS:
                    return False
                raise ValueError(text)
            if isinstance(self.default, int):
                return int(text)
            if isinstance(self.default, float):
                return float(text)
        except ValueError:
            raise ConfigError(
                f"配置 {self.key} 的值 {text!r} 无法转换为 {type(self.default).__name__}（来源: {source}）",
                context={"key": self.key, "source": source},
            )
        return text


def parse_key_value_text(text: str, source: str = "<text>") -> Dict[str, str]:
    """解析扁平的 key = value 文本，# 开头为注释"""
    result: Dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        if '=' not in stripped:
            raise ConfigError(f"{source}:{lineno} 缺少 '='：{stripped!r}",
                              context={"source": source, "line": lineno})
        key, value = stripped.split('=', 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno} 配置键为空", context={"source": source, "line": lineno})
        result[key] = value.strip()
    return result


def parse_override(expr: str) -> Dict[str, str]:
    """解析命令行 --set key=value"""
    if '=' not in expr:
        raise ConfigError(f"覆盖项格式应为 key=value：{expr!r}")
    key, value = expr.split('=', 1)
    return {key.strip(): value.strip()}


class ConfigManager:
    """实验配置管理器，支持命令行覆盖、环境变量、配置文件、预设默认值和注册默认值"""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._config_items = {}
            cls._instance._file_config = {}
            cls._instance._logger = logging.getLogger("BalCol-Config")
        return cls._instance

    def register_config(self, config_item: ConfigItem) -> None:
        """注册配置项"""
        self._config_items[config_item.key] = config_item

    def keys(self):
        return list(self._config_items.keys())

    def _check_known(self, entries: Mapping[str, Any], source: str) -> None:
        unknown = sorted(set(entries) - set(self._config_items))
        if unknown:
            raise ConfigError(f"未知配置键 {unknown}（来源: {source}）", context={"unknown": unknown, "source": source})

    def read_file(self, path: str) -> Dict[str, str]:
        """读取 key = value 配置文件"""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                text = f.read()
        except OSError as e:
            raise ConfigError(f"无法读取配置文件 {path}: {e}", context={"path": path})
        entries = parse_key_value_text(text, source=path)
        self._check_known(entries, path)
        self._logger.info(f"✅ 配置文件加载成功: {path}")
        return entries

    def load(self, path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None,
             experiment_defaults: Optional[Mapping[str, Any]] = None) -> Dict[str, Any]:
        """加载配置，优先级：命令行覆盖 > 环境变量 > 配置文件 > 实验预设 > 注册默认值

        任何非法值都直接抛出 ConfigError，不回退到默认值。
        """
        overrides = dict(overrides or {})
        experiment_defaults = dict(experiment_defaults or {})
        self._check_known(overrides, "命令行")
        self._check_known(experiment_defaults, "实验预设")

        self._file_config = self.read_file(path) if path else {}
        if not path:
            self._logger.debug("📌 未指定配置文件，使用默认值和环境变量")

        values: Dict[str, Any] = {}
        for key, item in self._config_items.items():
            env_value = os.environ.get(item.env_var)
            if key in overrides:
                value = item.convert(overrides[key], "命令行")
                self._logger.debug(f"🔧 从命令行覆盖配置 {key}: {value}")
            elif env_value is not None:
                value = item.convert(env_value, item.env_var)
                self._logger.debug(f"🔧 从环境变量加载配置 {key}: {item.env_var}")
            elif key in self._file_config:
                value = item.convert(self._file_config[key], "配置文件")
                self._logger.debug(f"📄 从配置文件加载配置 {key}")
            elif key in experiment_defaults:
                value = item.convert(experiment_defaults[key], "实验预设")
                self._logger.debug(f"🧪 使用实验预设配置 {key}: {value}")
            else:
                value = item.default
                self._logger.debug(f"📌 使用默认配置 {key}: {item.default}")

            if item.required and value is None:
                raise ConfigError(f"缺少必填配置 {key}", context={"key": key})
            if not item.validate(value):
                raise ConfigError(f"配置 {key} 的值 {value!r} 无效（{item.description}）",
                                  context={"key": key, "value": repr(value)})
            item.value = value
            values[key] = value

        self._logger.info("✅ 所有配置加载完成")
        return values

    def generate_default_config(self) -> Dict[str, Any]:
        """生成默认配置字典"""
        default_config = {}
        for key, item in self._config_items.items():
            default_config[key] = {
                'value': item.default,
                'description': item.description,
                'env_var': item.env_var,
                'required': item.required
            }
        return default_config

    def render_template(self) -> str:
        """把默认配置渲染为 key = value 模板文本"""
        lines = ["# BalCol 实验配置模板（key = value，# 为注释）", ""]
        for key, meta in self.generate_default_config().items():
            lines.append(f"# {meta['description']}（环境变量 {meta['env_var']}）")
            lines.append(f"{key} = {format_value(meta['value'])}")
            lines.append("")
        return "\n".join(lines)


def format_value(value: Any) -> str:
    """配置值 → 文本；浮点数用 repr 保证回读后逐位相等"""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# 创建全局配置管理器实例
config_manager = ConfigManager()
