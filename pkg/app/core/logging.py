import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Any

from app.core.settings import get_settings


class ToolkitLogger:
    """工具箱專用日誌記錄器"""

    def __init__(self, log_level: str = "INFO", log_file: str | None = None):
        self.logger = logging.getLogger("app")
        self.logger.setLevel(getattr(logging, log_level.upper()))

        # 避免重複添加處理器
        if not self.logger.handlers:
            self._setup_handlers(log_file)

        # 執行度量
        self.metrics: dict[str, Any] = {
            "commands_total": 0,
            "errors_total": 0,
            "avg_run_time": 0.0,
            "last_command_time": None,
        }

    def _setup_handlers(self, log_file: str | None) -> None:
        """設定日誌處理器"""
        formatter = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        )

        # 報表走 stdout，日誌走 stderr
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(formatter)
        self.logger.addHandler(console_handler)

        if log_file:
            log_path = Path(log_file)
            log_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(log_path, encoding="utf-8")
            file_handler.setFormatter(formatter)
            self.logger.addHandler(file_handler)

    def log_command_start(self, command: str, config: dict[str, Any]) -> None:
        """記錄指令開始與完整解析後的設定"""
        self.metrics["commands_total"] += 1
        self.metrics["last_command_time"] = datetime.now()

        log_data = {
            "command": command,
            "config": config,
            "timestamp": datetime.now().isoformat(),
        }
        self.logger.info(f"Command started: {log_data}")

    def log_command_end(self, command: str, run_time: float, success: bool = True) -> None:
        """記錄指令結束"""
        total = self.metrics["commands_total"]
        if total <= 1:
            self.metrics["avg_run_time"] = run_time
        else:
            self.metrics["avg_run_time"] = (
                self.metrics["avg_run_time"] * (total - 1) + run_time
            ) / total

        log_data = {
            "command": command,
            "run_time": f"{run_time:.3f}s",
            "success": success,
        }
        level = logging.INFO if success else logging.ERROR
        self.logger.log(level, f"Command finished: {log_data}")

    def log_command_error(self, command: str, code: str, error: str) -> None:
        """記錄指令錯誤"""
        self.metrics["errors_total"] += 1
        self.logger.error(f"Command error: {{'command': '{command}', 'code': '{code}', 'error': {error!r}}}")

    def get_metrics(self) -> dict[str, Any]:
        """取得執行度量"""
        return {
            **self.metrics,
            "error_rate": (
                self.metrics["errors_total"] / self.metrics["commands_total"]
                if self.metrics["commands_total"] > 0
                else 0
            ),
            "last_command_time": (
                self.metrics["last_command_time"].isoformat()
                if self.metrics["last_command_time"]
                else None
            ),
        }


_settings = get_settings()

# 單例模式
toolkit_logger = ToolkitLogger(log_level=_settings.log_level, log_file=_settings.log_file)
