"""
Logging setup - structlog rendering on stderr
"""
import logging
import os
import sys

import structlog

DEFAULT_LEVEL = "INFO"


def configure_logging(level: str = None, fmt: str = None) -> None:
    """Configure structlog once for the process.

    ``level`` and ``fmt`` fall back to ``REFCON_LOG_LEVEL`` / ``REFCON_LOG_FORMAT``.
    """
    level_name = (level or os.getenv("REFCON_LOG_LEVEL", DEFAULT_LEVEL)).upper()
    numeric_level = logging.getLevelName(level_name)
    if not isinstance(numeric_level, int):
        numeric_level = logging.INFO

    fmt = fmt or os.getenv("REFCON_LOG_FORMAT", "console")
    renderer = (
        structlog.processors.JSONRenderer(sort_keys=True)
        if fmt == "json"
        else structlog.dev.ConsoleRenderer(colors=False)
    )

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.StackInfoRenderer(),
            structlog.processors.format_exc_info,
            renderer,
        ],
        wrapper_class=structlog.make_filtering_bound_logger(numeric_level),
        # sys.stderr is resolved per call so redirected streams are honoured
        logger_factory=lambda *args: structlog.PrintLogger(file=sys.stderr),
        cache_logger_on_first_use=False,
    )
