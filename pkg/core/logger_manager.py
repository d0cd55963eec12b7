"""求解器日志：控制台彩色文本 + 按天轮转的文件日志（可选 JSON）

log_with_context 把 step、column、iteration 等上下文挂到 record 上，
JSON 模式下这些字段提升为顶层键，文本模式下追加在消息后面。
"""

import json
import logging
import logging.handlers
import os
import sys
import traceback
from datetime import datetime, timezone
from typing import Any, Dict, Optional, Union

# 默认日志目录（可由配置 log_dir 覆盖）
LOG_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'logs')
LOG_ENCODING = 'utf-8'
LOG_FILE = 'balcol.log'
ERROR_LOG_FILE = 'balcol_error.log'

# 提升到 JSON 顶层的求解器上下文字段
PROMOTED_FIELDS = ('step', 'column', 'iteration', 'code')

LEVEL_COLORS = {
    'DEBUG': '\033[36m',
    'INFO': '\033[32m',
    'WARNING': '\033[33m',
    'ERROR': '\033[31m',
    'CRITICAL': '\033[35m',
}
RESET = '\033[0m'
TEXT_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class SolverLogFormatter(logging.Formatter):
    """文本或 JSON 格式；colored 只在终端上给级别字段着色"""

    def __init__(self, structured: bool = False, colored: bool = False, include_stack_info: bool = False):
        super().__init__(None if structured else TEXT_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')
        self.structured = structured
        self.colored = colored
        self.include_stack_info = include_stack_info

    def _as_json(self, record: logging.LogRecord) -> str:
        context = getattr(record, 'context', None) or {}
        payload: Dict[str, Any] = {
            'timestamp': datetime.fromtimestamp(record.created, timezone.utc).isoformat().replace('+00:00', 'Z'),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'process': record.process,
            'thread': record.threadName,
        }
        for field in PROMOTED_FIELDS:
            if field in context:
                payload[field] = context[field]
        if context:
            payload['context'] = context
        if record.exc_info:
            exc_type, exc, _ = record.exc_info
            payload['error'] = {'type': exc_type.__name__, 'message': str(exc)}
            if self.include_stack_info:
                payload['stack_trace'] = ''.join(traceback.format_exception(*record.exc_info))
        return json.dumps(payload, ensure_ascii=False, default=str)

    def format(self, record: logging.LogRecord) -> str:
        if self.structured:
            return self._as_json(record)
        text = super().format(record)
        color = LEVEL_COLORS.get(record.levelname) if self.colored else None
        if color:
            head, sep, tail = text.partition(f' - {record.levelname} - ')
            if sep:
                text = f"{head} - {color}{record.levelname}{RESET} - {tail}"
        return text


class LoggerManager:
    """求解器日志管理器"""
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._loggers = {}
            cls._instance.log_dir = LOG_DIR
        return cls._instance

    def _rotating_handler(self, filename: str, level: int, backup_count: int,
                          structured: bool) -> logging.Handler:
        handler = logging.handlers.TimedRotatingFileHandler(
            os.path.join(self.log_dir, filename),
            when='midnight',
            backupCount=backup_count,
            encoding=LOG_ENCODING,
        )
        handler.setLevel(level)
        handler.setFormatter(SolverLogFormatter(structured=structured, include_stack_info=True))
        return handler

    def setup(self, log_level: str = "INFO", structured: bool = False,
              log_dir: Optional[str] = None, file_logging: bool = True) -> bool:
        """重建根日志器的处理器：控制台 + balcol.log + balcol_error.log"""
        try:
            level = getattr(logging, log_level)
            root_logger = logging.getLogger()
            root_logger.setLevel(level)
            for handler in root_logger.handlers[:]:
                root_logger.removeHandler(handler)
                handler.close()

            console = logging.StreamHandler(sys.stderr)
            console.setLevel(level)
            console.setFormatter(SolverLogFormatter(colored=sys.stderr.isatty()))
            root_logger.addHandler(console)

            if file_logging:
                self.log_dir = log_dir or LOG_DIR
                os.makedirs(self.log_dir, exist_ok=True)
                root_logger.addHandler(self._rotating_handler(LOG_FILE, logging.DEBUG, 7, structured))
                root_logger.addHandler(self._rotating_handler(ERROR_LOG_FILE, logging.ERROR, 14, structured))

            main_logger = self.get_logger('BalCol')
            main_logger.info(f"✅ 日志系统初始化完成，级别: {log_level}")
            if file_logging:
                main_logger.info(f"📁 日志文件目录: {self.log_dir}（结构化: {'是' if structured else '否'}）")
            return True
        except (AttributeError, OSError) as e:
            print(f"❌ 日志系统初始化失败: {str(e)}", file=sys.stderr)
            return False

    def get_logger(self, name: str) -> logging.Logger:
        """获取指定名称的日志器"""
        if name not in self._loggers:
            self._loggers[name] = logging.getLogger(name)
        return self._loggers[name]

    def log_with_context(self, logger: Union[str, logging.Logger], level: int, message: str,
                         context: Optional[Dict[str, Any]] = None, exc_info: bool = False) -> None:
        """带求解器上下文的日志记录"""
        if isinstance(logger, str):
            logger = self.get_logger(logger)
        if context:
            message = f"{message} | 上下文: {json.dumps(context, ensure_ascii=False, default=str)}"
        logger.log(level, message, exc_info=exc_info, extra={'context': context} if context else None)


# 创建全局日志管理器实例
logger_manager = LoggerManager()
