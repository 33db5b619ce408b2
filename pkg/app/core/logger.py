import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import List, Optional
from app.core.config import LogConfig, config

LOGGER_NAME = 'cartp'
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
# 单个日志文件最大 10MB，最多保留 5 个备份
MAX_BYTES = 10 * 1024 * 1024
BACKUP_COUNT = 5

LEVELS = {
    'DEBUG': logging.DEBUG,
    'INFO': logging.INFO,
    'WARNING': logging.WARNING,
    'ERROR': logging.ERROR,
    'CRITICAL': logging.CRITICAL,
}


def parse_level(level_str: Optional[str]) -> int:
    """将字符串日志级别转换为整数，未知级别按 INFO 处理

    Args:
        level_str: 日志级别字符串 (DEBUG, INFO, WARNING, ERROR, CRITICAL)

    Returns:
        对应的日志级别整数
    """
    return LEVELS.get((level_str or '').strip().upper(), logging.INFO)


class LogManager:
    """cartp 日志管理

    顶层记录器 cartp 持有全部处理器且不向根记录器传播；各模块通过 get_logger
    取得 cartp.<模块> 子记录器，级别跟随顶层记录器。
    """

    def __init__(self, settings: LogConfig, name: str = LOGGER_NAME):
        """初始化日志配置

        Args:
            settings: 日志配置段
            name: 顶层记录器名称
        """
        self.logger = logging.getLogger(name)
        self.logger.propagate = False
        self.configure(settings.level, settings.file)

    def _build_handlers(self, log_file: Optional[str]) -> List[logging.Handler]:
        # 控制台输出到 stderr，命令的标准输出只留给结果
        handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
        if log_file:
            log_dir = os.path.dirname(log_file)
            if log_dir:
                os.makedirs(log_dir, exist_ok=True)
            handlers.append(RotatingFileHandler(log_file, maxBytes=MAX_BYTES, backupCount=BACKUP_COUNT,
                                                encoding='utf-8'))
        return handlers

    def configure(self, level_str: Optional[str], log_file: Optional[str] = None) -> None:
        """替换处理器并设置级别，重复调用不会叠加处理器

        Args:
            level_str: 日志级别字符串
            log_file: 日志文件路径，为空时只输出到控制台
        """
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
            handler.close()
        formatter = logging.Formatter(LOG_FORMAT)
        for handler in self._build_handlers(log_file):
            handler.setFormatter(formatter)
            self.logger.addHandler(handler)
        self.set_level(level_str)

    def set_level(self, level_str: Optional[str]) -> None:
        """运行时调整日志级别（命令行 --log-level）"""
        level = parse_level(level_str)
        self.logger.setLevel(level)
        for handler in self.logger.handlers:
            handler.setLevel(level)

    def get_logger(self, name: Optional[str] = None) -> logging.Logger:
        """获取日志记录器

        Args:
            name: 子记录器名称，如 saem、simulation；为空时返回顶层记录器

        Returns:
            配置好的日志记录器实例
        """
        return self.logger.getChild(name) if name else self.logger


# 创建全局日志实例
log_manager = LogManager(config.log)
get_logger = log_manager.get_logger
