"""运行监控模块
记录时间步耗时、Newton 迭代与 HEVI 阶段计数、进程资源占用
"""

import os
import time
import threading
from collections import deque
from datetime import datetime
from typing import Any, Dict

import psutil

from core.logger_manager import logger_manager

logger = logger_manager.get_logger('BalCol-Monitor')


class RunMonitor:
    """运行监控器，负责收集一次实验运行的性能与求解统计"""

    _instance = None
    _lock = threading.Lock()

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super(RunMonitor, cls).__new__(cls)
                    cls._instance._initialize()
        return cls._instance

    def _initialize(self):
        """初始化监控数据"""
        self._process = psutil.Process(os.getpid())
        self._stats_lock = threading.Lock()
        self.memory_history = deque(maxlen=120)
        self.step_stats = {
            "total_steps": 0,
            "total_newton_iterations": 0,
            "step_times": deque(maxlen=1000),
        }
        self.stage_stats = {
            "implicit_solves": 0,
            "tendency_evaluations": 0,
        }
        self.error_stats: Dict[str, int] = {}
        self.start_time = time.time()

    def reset(self):
        """开始新一轮运行前清零统计"""
        with self._stats_lock:
            self._initialize_counters()

    def _initialize_counters(self):
        self.memory_history.clear()
        self.step_stats["total_steps"] = 0
        self.step_stats["total_newton_iterations"] = 0
        self.step_stats["step_times"].clear()
        self.stage_stats["implicit_solves"] = 0
        self.stage_stats["tendency_evaluations"] = 0
        self.error_stats.clear()
        self.start_time = time.time()

    def default_thread_count(self) -> int:
        """逐列并行求解的默认线程数：逻辑 CPU 数"""
        count = psutil.cpu_count(logical=True) or os.cpu_count() or 1
        return max(1, int(count))

    def sample_memory(self):
        """采样一次常驻内存"""
        rss = self._process.memory_info().rss
        self.memory_history.append({
            "timestamp": datetime.now(),
            "rss_mb": rss / (1024 * 1024),
        })

    def record_step(self, seconds: float, newton_iterations: int):
        """记录一个时间步的耗时和 Newton 迭代数"""
        with self._stats_lock:
            self.step_stats["total_steps"] += 1
            self.step_stats["total_newton_iterations"] += int(newton_iterations)
            self.step_stats["step_times"].append(seconds * 1000)
            if self.step_stats["total_steps"] % 100 == 1:
                self.sample_memory()

    def record_stage(self, implicit_solves: int = 0, tendency_evaluations: int = 0):
        """记录 HEVI 阶段计数"""
        with self._stats_lock:
            self.stage_stats["implicit_solves"] += implicit_solves
            self.stage_stats["tendency_evaluations"] += tendency_evaluations

    def record_solver_error(self, code: str):
        """记录求解器错误"""
        with self._stats_lock:
            self.error_stats[code] = self.error_stats.get(code, 0) + 1

    def get_run_status(self) -> Dict[str, Any]:
        """获取当前运行状态"""
        uptime = time.time() - self.start_time
        step_times = self.step_stats["step_times"]
        avg_step_ms = sum(step_times) / len(step_times) if step_times else 0.0
        steps = self.step_stats["total_steps"]
        mean_iters = self.step_stats["total_newton_iterations"] / steps if steps else 0.0
        self.sample_memory()
        latest_memory = self.memory_history[-1]
        return {
            "uptime_seconds": uptime,
            "uptime_formatted": self._format_uptime(uptime),
            "timestamp": datetime.now().isoformat(),
            "system": {
                "cpu_usage_percent": psutil.cpu_percent(interval=None),
                "rss_mb": round(latest_memory["rss_mb"], 1),
                "peak_rss_mb": round(max(m["rss_mb"] for m in self.memory_history), 1),
            },
            "solver": {
                "total_steps": steps,
                "mean_newton_iterations": round(mean_iters, 3),
                "avg_step_time_ms": round(avg_step_ms, 3),
                "implicit_solves": self.stage_stats["implicit_solves"],
                "tendency_evaluations": self.stage_stats["tendency_evaluations"],
                "errors": dict(self.error_stats),
            },
        }

    def _format_uptime(self, seconds: float) -> str:
        """实验耗时，精确到 0.1 秒"""
        minutes, secs = divmod(seconds, 60.0)
        hours, minutes = divmod(int(minutes), 60)
        if hours:
            return f"{hours}小时{minutes}分{secs:.1f}秒"
        if minutes:
            return f"{minutes}分{secs:.1f}秒"
        return f"{secs:.1f}秒"

    def log_summary(self):
        """运行结束时输出监控摘要"""
        status = self.get_run_status()
        solver = status["solver"]
        logger.info(f"📊 运行耗时 {status['uptime_formatted']} | 步数 {solver['total_steps']} | "
                    f"平均 Newton 迭代 {solver['mean_newton_iterations']} | 平均步耗时 {solver['avg_step_time_ms']} ms")
        logger.info(f"📊 隐式求解 {solver['implicit_solves']} 次 | 水平倾向计算 {solver['tendency_evaluations']} 次 | "
                    f"峰值内存 {status['system']['peak_rss_mb']} MB")
        if solver["errors"]:
            logger.warning(f"⚠️ 求解器错误统计: {solver['errors']}")


# 创建全局单例实例
monitor_manager = RunMonitor()
