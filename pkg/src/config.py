"""Application configuration using Pydantic Settings."""

from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Application Settings
    app_env: Literal["development", "ci", "production"] = Field(
        default="development", description="Application environment"
    )
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = Field(
        default="INFO", description="Logging level"
    )
    log_json: bool = Field(
        default=True, description="Render logs as JSON lines instead of console text"
    )

    # Runs
    output_dir: Path = Field(default=Path("runs"), description="Default run directory")

    # Numerics
    torch_threads: int = Field(
        default=1,
        ge=1,
        description="Intra-op threads for torch; 1 keeps reductions bitwise reproducible",
    )
    log_every: int = Field(default=25, ge=1, description="Training-loop logging interval")

    @property
    def is_development(self) -> bool:
        """Check if running in development mode."""
        return self.app_env == "development"


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
