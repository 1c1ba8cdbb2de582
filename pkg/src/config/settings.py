"""Process settings using Pydantic Settings

Environment variables use the ``SBR_`` prefix (``SBR_SEED``, ``SBR_LOG_LEVEL``,
``SBR_THREADS`` ...). A ``.env`` file in the working directory is honoured.
"""

from typing import Literal, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings that are not part of a run configuration"""

    model_config = SettingsConfigDict(
        env_prefix="SBR_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Settings
    app_name: str = Field(default="softbraid-refiner", description="Application name")
    app_version: str = Field(default="0.1.0", description="Application version")
    debug: bool = Field(default=False, description="Debug mode")
    log_level: str = Field(default="INFO", description="Logging level")

    # Logging
    log_format: Literal["json", "text"] = Field(default="json", description="Log format (json or text)")
    log_file_path: Optional[str] = Field(None, description="Log file path")

    # Reproducibility
    seed: Optional[int] = Field(None, description="Seed used when a command gets no --seed")
    threads: int = Field(default=1, ge=1, description="Scenario-level worker threads")

    # Numerics
    check_finite: bool = Field(
        default=True,
        description="Raise on NaN/Inf produced by any autodiff operation",
    )

    @field_validator("log_level", mode="after")
    @classmethod
    def normalize_log_level(cls, v: str) -> str:
        """Upper-case the level name so logging.getLevelName accepts it"""
        return v.strip().upper()

    def __repr__(self) -> str:
        return (
            f"<Settings "
            f"app_name={self.app_name} "
            f"debug={self.debug} "
            f"seed={self.seed} "
            f"threads={self.threads}>"
        )


# Singleton instance
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get or create settings instance"""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reload_settings() -> Settings:
    """Drop the cached instance and re-read the environment"""
    global _settings
    _settings = None
    return get_settings()
