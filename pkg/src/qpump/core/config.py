"""
QPUMP - Process Settings
Configuración del proceso (entorno y .env), separada del documento de experimento
"""

from functools import lru_cache

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process settings"""

    model_config = SettingsConfigDict(
        env_prefix="QPUMP_",
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
    )

    # App Info
    app_name: str = "qpump"

    # Paralelismo: solo afecta velocidad, nunca los bytes de salida
    threads: int = Field(default=1, ge=1)

    # Logging
    log_level: str = Field(default="INFO")
    log_json: bool = False
    environment: str = Field(default="production")

    @field_validator("log_level")
    @classmethod
    def _upper_level(cls, value: str) -> str:
        return value.upper()

    @property
    def is_development(self) -> bool:
        return self.environment.lower() in ("development", "dev", "debug")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Get process settings"""
    return Settings()
