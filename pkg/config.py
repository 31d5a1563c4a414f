import json
from pathlib import Path
from typing import Any, Mapping, Type, TypeVar, Union

from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from exceptions import ConfigurationError, DataError

ConfigT = TypeVar("ConfigT", bound=BaseModel)


class Settings(BaseSettings):
    """Process settings loaded from environment variables (all optional)."""

    model_config = SettingsConfigDict(
        env_prefix="MMC_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Logging Configuration
    log_level: str = Field(default="INFO")
    log_file: Path = Field(default=Path("logs/mmc.log"))
    log_rotation: str = Field(default="1 day")
    log_retention: str = Field(default="7 days")

    # Run Configuration
    runs_dir: Path = Field(default=Path("runs"))
    default_seed: int = Field(default=0)

    # Ablation suites: 0 runs sub-experiments sequentially
    ablate_workers: int = Field(default=0, ge=0)


def parse_config(model_cls: Type[ConfigT], data: Union[Mapping[str, Any], ConfigT]) -> ConfigT:
    """Validate ``data`` against ``model_cls``; schema violations become ``ConfigurationError``."""
    if isinstance(data, model_cls):
        return data
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid {model_cls.__name__}: {e}") from e


def load_config(model_cls: Type[ConfigT], path: Path) -> ConfigT:
    """Read a JSON config file and validate it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise DataError(f"config file {path} does not exist") from e
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: not valid JSON ({e})") from e
    return parse_config(model_cls, raw)


# Global settings instance
settings = Settings()
