"""
Configuration for the volumetric change toolkit.

Toolkit-wide defaults come from VOLCHANGE_* environment variables (a .env file
in the working directory is honoured); command-line flags override them.
Structured inputs such as synthetic generation settings are read from YAML or
JSON files.
"""

import logging
import os
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import yaml
from dotenv import load_dotenv

from .datamodel import ONE_WEEK_SECONDS
from .errors import ConfigError
from .tiling import DEFAULT_OVERLAP, DEFAULT_PATCH

logger = logging.getLogger(__name__)

ENV_PREFIX = "VOLCHANGE_"


@dataclass(frozen=True)
class Settings:
    """Defaults shared by every command."""
    patch: int = DEFAULT_PATCH
    overlap: int = DEFAULT_OVERLAP
    jobs: int = 1
    seed: int = 0
    iou_threshold: float = 0.25
    max_gap: float = float(ONE_WEEK_SECONDS)
    labeled_fraction: float = 0.4
    log_level: str = "WARNING"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _log_level(value: str) -> str:
    level = value.upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        raise ValueError(f"unknown log level {value!r}")
    return level


_PARSERS: Dict[str, Callable[[str], Any]] = {
    "patch": int,
    "overlap": int,
    "jobs": int,
    "seed": int,
    "iou_threshold": float,
    "max_gap": float,
    "labeled_fraction": float,
    "log_level": _log_level,
}


def load_settings(env_file: Optional[str] = None) -> Settings:
    """
    Build Settings from the environment.

    Args:
        env_file: Optional .env path; defaults to searching the working directory

    Returns:
        Settings object
    """
    load_dotenv(env_file)
    values = {}
    for name, parse in _PARSERS.items():
        key = ENV_PREFIX + name.upper()
        raw = os.environ.get(key)
        if raw is None or raw.strip() == "":
            continue
        try:
            values[name] = parse(raw.strip())
        except ValueError as e:
            raise ConfigError(f"Invalid {key}={raw!r}: {e}") from None
        logger.debug("Setting %s from %s", name, key)
    return Settings(**values)


def load_config_file(path) -> Dict[str, Any]:
    """Read a YAML or JSON mapping."""
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"Config file not found: {file_path}")
    with open(file_path, "r") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Unparseable config file {file_path}: {e}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {file_path} must hold a mapping")
    return data
