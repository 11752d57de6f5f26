"""
QPUMP - Logging
structlog sobre logging estándar; toda la salida de logs va a stderr
"""

import logging
import sys
from typing import Optional

import structlog

from qpump.core.config import Settings, get_settings


def configure_logging(settings: Optional[Settings] = None) -> None:
    """Configura structlog sobre logging estándar (idempotente)"""
    settings = settings or get_settings()

    level = getattr(logging, settings.log_level, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(message)s",
        stream=sys.stderr,
        force=True,
    )

    renderer = (
        structlog.processors.JSONRenderer()
        if settings.log_json
        else structlog.dev.ConsoleRenderer(colors=False)
    )
    structlog.configure(
        processors=[
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            renderer,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )
