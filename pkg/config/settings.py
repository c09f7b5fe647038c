from pathlib import Path

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-level settings from the environment (``DVLBEAM_*``) or ``.env``."""

    model_config = SettingsConfigDict(
        env_prefix="DVLBEAM_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Experiment config used when --config is not given
    default_config: Path = Path("experiments/default.toml")

    # Logging
    log_level: str = "INFO"
    log_file: Path | None = None

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        level = v.upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"log_level must be a logging level name, got: {v}")
        return level

    def ensure_dirs(self) -> None:
        """Create the log directory if a log file is configured."""
        if self.log_file is not None:
            self.log_file.parent.mkdir(parents=True, exist_ok=True)


_settings: Settings | None = None


def get_settings() -> Settings:
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings
