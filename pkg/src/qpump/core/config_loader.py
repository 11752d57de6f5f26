"""
QPUMP - Config Loader
Carga, validación, serialización canónica y digest del documento de experimento
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Optional, Union

import structlog
from pydantic import ValidationError

from qpump.core.error_handler import ConfigError
from qpump.models.schemas import QPumpConfig

logger = structlog.get_logger("QPUMP_CONFIG")


def _first_error(exc: ValidationError) -> str:
    """Primer invariante violado, con la ruta del campo"""
    error = exc.errors()[0]
    path = ".".join(str(loc) for loc in error.get("loc", ()))
    message = error.get("msg", "invalid value")
    if message.startswith("Value error, "):
        message = message[len("Value error, "):]
    return f"{path}: {message}" if path else message


def validate(raw: Dict[str, Any]) -> QPumpConfig:
    """Valida un documento ya parseado y completa los valores por defecto"""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    try:
        return QPumpConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_first_error(exc)) from exc


def load_config(path: Optional[Union[str, Path]]) -> QPumpConfig:
    """Lee un JSON de configuración; sin ruta retorna la configuración por defecto"""
    if path is None:
        return QPumpConfig()

    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config not found: {config_path}")

    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON (line {exc.lineno}): {exc.msg}") from exc

    config = validate(raw)
    logger.debug("config_loaded", path=str(config_path), digest=config_digest(config)[:12])
    return config


def to_document(config: QPumpConfig) -> Dict[str, Any]:
    return config.model_dump(mode="json")


def serialize(config: QPumpConfig, indent: Optional[int] = 2) -> str:
    """JSON con claves ordenadas; los floats usan repr (ida y vuelta exacta)"""
    return json.dumps(to_document(config), sort_keys=True, indent=indent)


def config_digest(config: QPumpConfig) -> str:
    canonical = json.dumps(to_document(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
