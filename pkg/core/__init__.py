"""BalCol 核心模块统一导入文件

配置、日志、监控与实验管理器都在首次访问时才导入：
core.config 在导入时注册全部配置项，experiment_manager 扫描 experiments/ 时又会反向导入 dycore。
"""

import importlib
from typing import Any, Tuple

# 属性名 → (模块, 模块内的全局实例)
_MANAGERS = {
    "experiment_manager": (".experiment_manager", "experiment_manager"),
    "config_manager": (".config", "config_manager"),
    "monitor_manager": (".monitor", "monitor_manager"),
    "logger_manager": (".logger_manager", "logger_manager"),
}


class LazyManager:
    """首次访问时导入并缓存到类属性上的描述器"""

    def __init__(self, target: Tuple[str, str]):
        self.module, self.attribute = target

    def __set_name__(self, owner, name):
        self.name = name

    def __get__(self, instance, owner) -> Any:
        value = getattr(importlib.import_module(self.module, __name__), self.attribute)
        setattr(owner, self.name, value)
        return value


class Core:
    """核心组件容器"""
    experiment_manager = LazyManager(_MANAGERS["experiment_manager"])
    config_manager = LazyManager(_MANAGERS["config_manager"])
    monitor_manager = LazyManager(_MANAGERS["monitor_manager"])
    logger_manager = LazyManager(_MANAGERS["logger_manager"])


core = Core()


def get_experiment_manager():
    return core.experiment_manager


def get_config_manager():
    """配置管理器（已注册全部实验配置项）"""
    return core.config_manager


def get_monitor_manager():
    return core.monitor_manager


def get_logger_manager():
    return core.logger_manager


__version__ = "1.0.0"
__all__ = [
    "core",
    "get_experiment_manager",
    "get_config_manager",
    "get_monitor_manager",
    "get_logger_manager",
    "__version__",
]
