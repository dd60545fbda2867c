"""
Structured logging configuration for gfx-lab runs.
Console output stays human-readable; the optional log file can be JSON lines.
"""

from __future__ import annotations

import json
import logging
import logging.handlers
import sys
from datetime import datetime
from pathlib import Path
from typing import Any

CONSOLE_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class StructuredFormatter(logging.Formatter):
    """
    JSON formatter for log aggregation.
    Falls back to the plain format when ``use_json`` is off.
    """

    def __init__(self, use_json: bool = False):
        super().__init__(CONSOLE_FORMAT)
        self.use_json = use_json

    def format(self, record: logging.LogRecord) -> str:
        if not self.use_json:
            text = super().format(record)
            context = _context(record)
            if context:
                text += " " + " ".join(f"{k}={v}" for k, v in context.items())
            return text

        log_data = {
            "timestamp": datetime.fromtimestamp(record.created).isoformat(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
            "module": record.module,
            "function": record.funcName,
            "line": record.lineno,
        }
        if record.exc_info:
            log_data["exception"] = self.formatException(record.exc_info)
        log_data.update(_context(record))
        return json.dumps(log_data, ensure_ascii=False, default=str)


def _context(record: logging.LogRecord) -> dict[str, Any]:
    """``ctx_``-prefixed extras with the prefix stripped."""
    return {key[4:]: value for key, value in record.__dict__.items() if key.startswith("ctx_")}


def setup_logging(
    level: int = logging.INFO,
    use_json: bool = False,
    log_file: Path | None = None,
) -> None:
    """
    Configure the root logger.

    Args:
        level: Logging level
        use_json: Use JSON lines in the log file
        log_file: Optional rotating log file path
    """
    handlers: list[logging.Handler] = []

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(StructuredFormatter(use_json=False))
    handlers.append(console_handler)

    if log_file:
        log_file = Path(log_file)
        log_file.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5,
            encoding="utf-8",
        )
        file_handler.setFormatter(StructuredFormatter(use_json=use_json))
        handlers.append(file_handler)

    logging.basicConfig(level=level, handlers=handlers, force=True)


def get_logger(name: str) -> logging.Logger:
    """Get a logger with the given name."""
    return logging.getLogger(name)


def log_structured(logger: logging.Logger, level: int, message: str, **context: Any) -> None:
    """Logs ``message`` with every keyword attached as a ``ctx_`` field."""
    logger.log(level, message, extra={f"ctx_{key}": value for key, value in context.items()})
