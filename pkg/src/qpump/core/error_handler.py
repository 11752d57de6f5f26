"""
QPUMP - Error Handler
Jerarquía de errores con códigos de salida y reporte legible por máquina
"""

import json
import re
import sys
import uuid
from typing import Any, Dict, Optional, TextIO

import structlog

logger = structlog.get_logger("QPUMP_ERROR_HANDLER")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_SIM_FLAGS = 4


class QPumpError(Exception):
    """Base de todos los errores del toolkit"""

    exit_code = EXIT_INTERNAL
    error_type = "qpump_error"


class ConfigError(QPumpError):
    exit_code = EXIT_INPUT
    error_type = "config_error"


class InputError(QPumpError):
    exit_code = EXIT_INPUT
    error_type = "input_error"


class DomainError(QPumpError, ValueError):
    """Argumento fuera del dominio físico de una fórmula"""

    exit_code = EXIT_INPUT
    error_type = "domain_error"


class FitConvergenceError(QPumpError):
    exit_code = EXIT_NOT_CONVERGED
    error_type = "fit_not_converged"


class SimulationFlagError(QPumpError):
    exit_code = EXIT_SIM_FLAGS
    error_type = "simulation_flags"


class CliErrorHandler:
    """Convierte excepciones en una línea JSON en stderr y un código de salida"""

    def __init__(self, is_development: bool = False):
        self.is_development = is_development

        # Paths absolutos largos no se exponen en producción
        self.sensitive_patterns = [
            r'/home/[^"\s]+',
            r'/root/[^"\s]+',
            r'[C-Z]:\\[^"\s]+',
        ]

    def generate_error_id(self) -> str:
        return f"ERR_{uuid.uuid4().hex[:8].upper()}"

    def sanitize_error_message(self, message: str) -> str:
        if self.is_development:
            return message

        sanitized = message
        for pattern in self.sensitive_patterns:
            sanitized = re.sub(pattern, lambda m: "…/" + m.group(0).rsplit("/", 1)[-1], sanitized)

        lines = sanitized.split("\n")
        return lines[0]

    def create_error_record(
        self,
        exc: BaseException,
        error_id: str,
        details: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        if isinstance(exc, QPumpError):
            exit_code = exc.exit_code
            error_type = exc.error_type
        else:
            exit_code = EXIT_INTERNAL
            error_type = "internal_error"

        record = {
            "error": True,
            "error_id": error_id,
            "type": error_type,
            "message": self.sanitize_error_message(str(exc)),
            "exit_code": exit_code,
        }
        if self.is_development and details:
            record["debug_details"] = details
        return record

    def handle(self, exc: BaseException, stream: Optional[TextIO] = None) -> int:
        """Reporta la excepción y retorna el código de salida"""
        error_id = self.generate_error_id()
        record = self.create_error_record(exc, error_id, {"exception_type": type(exc).__name__})

        if record["exit_code"] == EXIT_INTERNAL:
            logger.error("unexpected_error", error_id=error_id, exc_info=self.is_development)
        else:
            logger.warning("command_failed", error_id=error_id, type=record["type"])

        out = stream if stream is not None else sys.stderr
        out.write(json.dumps(record, ensure_ascii=False) + "\n")
        out.flush()
        return record["exit_code"]
