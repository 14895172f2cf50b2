"""
Run config loaders

JSON and YAML run-config loading/saving utilities. The format follows the
file suffix: .json, or .yaml/.yml.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import yaml  # type: ignore

from ..errors import ConfigValidationError
from .base import RunConfig

logger = logging.getLogger(__name__)

YAML_SUFFIXES = (".yaml", ".yml")


def _read_document(path: Path) -> Dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() in YAML_SUFFIXES:
            data = yaml.safe_load(text)
        elif path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            raise ConfigValidationError(f"unsupported config format '{path.suffix}'", key="<file>")
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigValidationError(f"cannot parse {path}: {exc}", key="<file>") from exc
    return data if data is not None else {}


def load_run_config(filepath: Union[str, Path]) -> RunConfig:
    """
    Load a run config from JSON or YAML

    Args:
        filepath: Path to a .json, .yaml or .yml file

    Returns:
        Validated RunConfig

    Raises:
        ConfigValidationError: On parse errors, unknown keys or invalid values

    Example:
        >>> config = load_run_config("configs/dsu.yaml")
    """
    path = Path(filepath)
    config = RunConfig.from_dict(_read_document(path))
    logger.debug(f"[Config] Loaded {path} (hash {config.config_hash()[:8]})")
    return config


def save_run_config(config: RunConfig, filepath: Union[str, Path]) -> Path:
    """
    Save a run config; YAML for .yaml/.yml, JSON otherwise

    Example:
        >>> save_run_config(config, "run/config.json")
    """
    path = Path(filepath)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = config.to_dict()
    with open(path, "w", encoding="utf-8") as f:
        if path.suffix.lower() in YAML_SUFFIXES:
            yaml.safe_dump(data, f, allow_unicode=True, default_flow_style=False, sort_keys=False)
        else:
            json.dump(data, f, indent=2)
    return path
