"""
Run configuration for featshift

Strict run-config documents with JSON and YAML support.
"""

from .base import DEFAULT_SWEEP_VALUES, SCHEMA_VERSION, SWEEP_NAMES, RunConfig
from .builder import RunConfigBuilder
from .loaders import load_run_config, save_run_config

__all__ = [
    "RunConfig",
    "RunConfigBuilder",
    "load_run_config",
    "save_run_config",
    "SCHEMA_VERSION",
    "SWEEP_NAMES",
    "DEFAULT_SWEEP_VALUES",
]
