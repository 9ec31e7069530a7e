import logging
import logging.handlers
import os
from datetime import datetime
from typing import Optional

import psutil

_configured = False


def setup_logger(debug: bool = False, log_dir: Optional[str] = None) -> logging.Logger:
    """アプリケーションのロガーを設定します。

    Used by both the Flask app factory and the CLI. Handlers are attached once per
    process; later calls only adjust levels.
    """
    global _configured
    level = logging.DEBUG if debug else logging.INFO

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    if not _configured:
        # ログディレクトリの作成
        log_dir = log_dir or os.path.join(os.path.dirname(os.path.dirname(__file__)), 'logs')
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, f'trendguard_{datetime.now().strftime("%Y%m%d")}.log')

        formatter = logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        )

        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=10485760,  # 10MB
            backupCount=10,
            encoding='utf-8'
        )
        file_handler.setFormatter(formatter)
        file_handler.setLevel(logging.INFO)

        # stdout is reserved for command output
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
        console_handler.setLevel(level)

        root_logger.addHandler(file_handler)
        root_logger.addHandler(console_handler)
        _configured = True

    app_logger = logging.getLogger('TrendGuard')
    app_logger.setLevel(level)

    # 不要なログの抑制
    logging.getLogger('werkzeug').setLevel(logging.WARNING)
    logging.getLogger('numba').setLevel(logging.WARNING)

    return app_logger


def get_logger(name: str) -> logging.Logger:
    """指定された名前のロガーを取得します。"""
    return logging.getLogger(f'TrendGuard.{name}')


def log_memory_usage(logger: logging.Logger, stage: str) -> None:
    """Log resident memory of this process after a large stage."""
    try:
        process = psutil.Process(os.getpid())
        rss_mb = process.memory_info().rss / 1024 / 1024
        logger.info(f"Memory usage after {stage}: {rss_mb:.2f} MB ({process.memory_percent():.1f}%)")
    except Exception as e:
        logger.error(f"Failed to check memory usage: {str(e)}")
