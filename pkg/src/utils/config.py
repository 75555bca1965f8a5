"""Configuration management for dmlworkbench."""
import logging
from datetime import datetime
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()

_LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(filename)s:%(lineno)d %(message)s"


class Config(BaseSettings):
    """Application configuration loaded from DMLWB_* environment variables."""

    model_config = SettingsConfigDict(
        env_prefix="DMLWB_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # Worker pool
    threads: int = Field(default=1, ge=1)

    # Logging
    log_level: str = Field(default="INFO")
    log_file: Optional[Path] = Field(default=None)

    # Output
    results_dir: Path = Field(default=Path("results"))

    # Size of the single large draw behind design-true sigma^2 / Lambda
    truth_draws: int = Field(default=400_000, ge=10_000)

    @field_validator("log_level")
    @classmethod
    def _check_level(cls, value: str) -> str:
        level = value.upper()
        if level not in {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}:
            raise ValueError(f"Unknown log level: {value}")
        return level


# Global configuration instance
_config: Optional[Config] = None


def get_config() -> Config:
    """Get the global configuration instance."""
    global _config
    if _config is None:
        _config = Config()
    return _config


def reset_config() -> None:
    """Reset the global configuration (useful for testing)."""
    global _config
    _config = None


def setup_logging(level: Optional[str] = None, log_file: Optional[Path] = None) -> None:
    """Configure root logging with a console handler and an optional file handler.

    Args:
        level: Log level name; defaults to the configured level
        log_file: Log file path. A directory gets a timestamped file inside it.
    """
    config = get_config()
    level = (level or config.log_level).upper()
    log_file = log_file or config.log_file

    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        log_file = Path(log_file)
        if log_file.is_dir():
            stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            log_file = log_file / f"dmlwb_{stamp}.log"
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(level=level, format=_LOG_FORMAT, handlers=handlers, force=True)
    logger.debug(f"Logging configured at {level}")
