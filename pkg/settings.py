import logging
import logging.config
from pathlib import Path
from typing import Literal, Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


class Settings(BaseSettings):
    """Process-level knobs, read from LLAG_* environment variables or a .env file."""

    model_config = SettingsConfigDict(env_prefix="LLAG_", env_file=".env", extra="ignore")

    threads: int = Field(1, ge=1)
    backend: Literal["threading", "loky"] = "threading"
    output_dir: str = "results"
    log_config: str = "logging.ini"
    log_level: str = "INFO"


def get_settings(**overrides) -> Settings:
    return Settings(**{k: v for k, v in overrides.items() if v is not None})


def configure_logging(settings: Settings, level: Optional[str] = None) -> None:
    path = Path(settings.log_config)
    if path.is_file():
        logging.config.fileConfig(path, disable_existing_loggers=False)
        if level:
            logging.getLogger().setLevel(level)
    else:
        logging.basicConfig(level=level or settings.log_level, format=LOG_FORMAT)
