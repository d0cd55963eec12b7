import importlib
import os
from typing import Any, Callable, Dict, List

from .errors import ConfigError
from .logger_manager import logger_manager

logger = logger_manager.get_logger('BalCol-Experiment')

# 全局实验注册池：预设名称 → 元信息 + 入口函数
EXPERIMENT_REGISTRY: Dict[str, Dict[str, Any]] = {}

EXPERIMENT_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'experiments')
EXPERIMENT_PACKAGE = 'experiments'


class ExperimentManager:
    """实验管理器单例：扫描 experiments/ 下带 EXPERIMENT_META 的模块并注册入口函数"""
    _instance = None
    _initialized = False

    def __new__(cls):
        """单例模式：确保全局只有一个实验管理器实例"""
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def init(self, experiment_dir: str = EXPERIMENT_DIR, package: str = EXPERIMENT_PACKAGE) -> None:
        """扫描实验目录并注册全部预设；重复调用直接返回"""
        if self._initialized:
            return
        EXPERIMENT_REGISTRY.clear()
        logger.debug(f"📌 开始扫描实验目录：{os.path.abspath(experiment_dir)}")

        for module_name in self._scan_modules(experiment_dir):
            try:
                module = importlib.import_module(f"{package}.{module_name}")
            except ImportError as e:
                logger.error(f"❌ 导入实验模块 {module_name} 失败：{str(e)}", exc_info=True)
                continue

            meta = getattr(module, "EXPERIMENT_META", None)
            if meta is None:
                logger.debug(f"⚠️ 跳过无 EXPERIMENT_META 的模块：{module_name}")
                continue

            required_meta_fields = ["name", "handler", "description"]
            if not all(field in meta for field in required_meta_fields):
                logger.error(f"❌ 实验 {module_name} 元信息缺失必选字段！需包含：{required_meta_fields}，跳过注册")
                continue

            handler = getattr(module, meta["handler"], None)
            if not callable(handler):
                logger.error(f"❌ 实验 {module_name} 中缺失入口函数 {meta['handler']}，跳过注册")
                continue

            name = meta["name"]
            if name in EXPERIMENT_REGISTRY:
                logger.error(f"❌ 实验名称 {name} 重复（{module_name}），跳过注册")
                continue

            EXPERIMENT_REGISTRY[name] = {
                **meta,
                "version": meta.get("version", "1.0.0"),
                "defaults": dict(meta.get("defaults", {})),
                "handler_func": handler,
                "module": module_name,
            }
            logger.debug(f"✅ 实验 {name} (版本 {EXPERIMENT_REGISTRY[name]['version']}) 注册成功")

        self._initialized = True
        logger.debug(f"📊 共注册 {len(EXPERIMENT_REGISTRY)} 个实验：{sorted(EXPERIMENT_REGISTRY)}")

    def _scan_modules(self, experiment_dir: str) -> List[str]:
        if not os.path.isdir(experiment_dir):
            logger.error(f"❌ 实验目录 {experiment_dir} 不存在")
            return []
        return sorted(
            name[:-3] for name in os.listdir(experiment_dir)
            if name.endswith('.py') and not name.startswith('_')
        )

    def names(self) -> List[str]:
        self.init()
        return sorted(EXPERIMENT_REGISTRY)

    def get(self, name: str) -> Dict[str, Any]:
        self.init()
        if name not in EXPERIMENT_REGISTRY:
            raise ConfigError(f"未知实验 {name!r}，可选：{sorted(EXPERIMENT_REGISTRY)}",
                              context={"experiment": name})
        return EXPERIMENT_REGISTRY[name]

    def defaults_for(self, name: str) -> Dict[str, Any]:
        """实验预设默认值（含 experiment 键本身）"""
        return {**self.get(name)["defaults"], "experiment": name}

    def handler_for(self, name: str) -> Callable:
        return self.get(name)["handler_func"]

    def run(self, config) -> Any:
        """按 config.experiment 分派到预设入口"""
        handler = self.handler_for(config.experiment)
        logger.info(f"🧪 运行实验 {config.experiment}")
        return handler(config)

    def describe(self) -> List[Dict[str, Any]]:
        """供 list 子命令展示"""
        self.init()
        return [
            {"name": name, "version": meta["version"], "description": meta["description"],
             "defaults": meta["defaults"]}
            for name, meta in sorted(EXPERIMENT_REGISTRY.items())
        ]

    def reset(self) -> None:
        """清空注册（测试中重新扫描用）"""
        EXPERIMENT_REGISTRY.clear()
        self._initialized = False


# 创建全局实验管理器实例
experiment_manager = ExperimentManager()
