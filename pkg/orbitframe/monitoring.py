"""
Logging and run observability for orbitframe.
Structured logging via structlog, operation timing, and the run-metadata block.
"""

import logging
import os
import sys
import time
from collections import defaultdict
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import psutil
import structlog


def setup_logging(log_level: str = "INFO", use_json: bool = True, log_file: Optional[str] = None):
    """Configure structured logging for the application."""
    level = getattr(logging, log_level.upper(), logging.INFO)

    handlers: List[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    log_file = log_file or os.getenv("ORBITFRAME_LOG_FILE")
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(level=level, format="%(message)s", handlers=handlers, force=True)

    renderer = structlog.processors.JSONRenderer() if use_json else structlog.dev.ConsoleRenderer()
    structlog.configure(
        processors=[
            structlog.stdlib.add_log_level,
            structlog.stdlib.add_logger_name,
            structlog.processors.TimeStamper(fmt="iso", utc=True),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(level),
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=False,
    )


logger = structlog.get_logger(__name__)


class OperationTimer:
    """Collect wall-clock durations of named operations."""

    def __init__(self):
        self.durations: Dict[str, List[float]] = defaultdict(list)

    def time(self, operation: str, **context: Any) -> "TimingContext":
        return TimingContext(self, operation, context)

    def record(self, operation: str, duration: float, context: Dict[str, Any]):
        self.durations[operation].append(duration)
        logger.info("operation_completed", operation=operation,
                    duration_seconds=round(duration, 6), **context)

    def summary(self) -> Dict[str, Dict[str, float]]:
        out = {}
        for operation, values in self.durations.items():
            out[operation] = {
                "count": len(values),
                "total_seconds": sum(values),
                "max_seconds": max(values),
            }
        return out


class TimingContext:
    """Context manager for operation timing."""

    def __init__(self, timer: OperationTimer, operation: str, context: Dict[str, Any]):
        self.timer = timer
        self.operation = operation
        self.context = context
        self._start = 0.0

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        context = dict(self.context)
        if exc_type is not None:
            context["failed"] = exc_type.__name__
        self.timer.record(self.operation, time.perf_counter() - self._start, context)


def run_metadata(timer: OperationTimer, command: str) -> Dict[str, Any]:
    """Non-deterministic facts about a run; written apart from the reports."""
    process = psutil.Process()
    return {
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "timings": timer.summary(),
        "peak_rss_bytes": process.memory_info().rss,
        "pid": process.pid,
    }


operation_timer = OperationTimer()
