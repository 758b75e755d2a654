"""
Structured logging for the ECFNet kit: one Pino-compatible JSON object per line
"""
import functools
import json
import logging
import os
import sys
import time
import traceback
from typing import Any, Callable, Dict, Optional, TextIO

from dotenv import load_dotenv

load_dotenv()


class StructuredLogger:
    """Structured logger that emits JSON records with keyword fields"""

    def __init__(self, service_name: str, level: Optional[str] = None, stream: Optional[TextIO] = None):
        self.service_name = service_name
        self.logger = logging.getLogger(f"ecfnet.{service_name}")
        level_name = (level or os.getenv("ECF_LOG_LEVEL", "INFO")).upper()
        self.logger.setLevel(getattr(logging, level_name, logging.INFO))

        self.logger.handlers.clear()
        handler = logging.StreamHandler(stream or sys.stderr)
        handler.setFormatter(StructuredFormatter(service_name))
        self.logger.addHandler(handler)
        self.logger.propagate = False

    def info(self, message: str, **kwargs: Any) -> None:
        self.logger.info(message, extra={"structured_data": kwargs})

    def warn(self, message: str, **kwargs: Any) -> None:
        self.logger.warning(message, extra={"structured_data": kwargs})

    def error(self, message: str, error: Optional[BaseException] = None, **kwargs: Any) -> None:
        """Log an error, flattening the exception and its structured context"""
        extra_data = kwargs.copy()
        if error is not None:
            extra_data.update({
                "error_type": type(error).__name__,
                "error_message": str(error),
                "traceback": traceback.format_exc() if sys.exc_info()[0] else None,
            })
            context = getattr(error, "context", None)
            if isinstance(context, dict):
                extra_data.update(context)
        self.logger.error(message, extra={"structured_data": extra_data})

    def debug(self, message: str, **kwargs: Any) -> None:
        self.logger.debug(message, extra={"structured_data": kwargs})


class StructuredFormatter(logging.Formatter):
    """Formats records as compact JSON with Pino level numbers"""

    def __init__(self, service_name: str):
        super().__init__()
        self.service_name = service_name

    def format(self, record: logging.LogRecord) -> str:
        log_data: Dict[str, Any] = {
            "level": self._get_pino_level(record.levelno),
            "time": int(record.created * 1000),
            "msg": record.getMessage(),
            "service": self.service_name,
            "pid": record.process,
        }

        structured = getattr(record, "structured_data", None)
        if structured:
            log_data.update(structured)

        if record.exc_info:
            log_data["error"] = {
                "type": record.exc_info[0].__name__ if record.exc_info[0] else "Unknown",
                "message": str(record.exc_info[1]) if record.exc_info[1] else "Unknown error",
                "stack": self.formatException(record.exc_info),
            }

        return json.dumps(log_data, separators=(",", ":"), default=str)

    def _get_pino_level(self, python_level: int) -> int:
        level_mapping = {
            logging.DEBUG: 20,
            logging.INFO: 30,
            logging.WARNING: 40,
            logging.ERROR: 50,
            logging.CRITICAL: 60,
        }
        return level_mapping.get(python_level, 30)


_loggers: Dict[str, StructuredLogger] = {}


def get_logger(service_name: str, level: Optional[str] = None) -> StructuredLogger:
    """Get or create the structured logger for a service"""
    if service_name not in _loggers:
        _loggers[service_name] = StructuredLogger(service_name, level)
    return _loggers[service_name]


def log_performance(logger: StructuredLogger, operation: str) -> Callable:
    """Decorator that logs wall time and outcome of an operation"""
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            start = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                duration_ms = (time.perf_counter() - start) * 1000
                logger.error(f"Operation failed: {operation}",
                             error=e,
                             operation=operation,
                             duration_ms=round(duration_ms, 2),
                             status="error")
                raise
            duration_ms = (time.perf_counter() - start) * 1000
            logger.info(f"Operation completed: {operation}",
                        operation=operation,
                        duration_ms=round(duration_ms, 2),
                        status="success")
            return result

        return wrapper
    return decorator
