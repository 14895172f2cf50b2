"""
Run config builder

Fluent API for assembling run configurations in code.
"""

from typing import Any, Dict, Optional

from .base import RunConfig


class RunConfigBuilder:
    """
    Fluent API for building run configurations

    Example:
        >>> config = RunConfigBuilder() \\
        ...     .dataset(n_per_class=100) \\
        ...     .augmentor(kind="DSU", p=0.5) \\
        ...     .training(epochs=10, seed=3) \\
        ...     .build()
    """

    def __init__(self, base: Optional[RunConfig] = None):
        self._config: Dict[str, Any] = (base or RunConfig()).to_dict()

    def _section(self, name: str, values: Dict[str, Any]) -> "RunConfigBuilder":
        section = self._config.get(name) or {}
        section.update(values)
        self._config[name] = section
        return self

    def dataset(self, **values: Any) -> "RunConfigBuilder":
        """
        Dataset options (manifest, n_per_class, image_size, seed, classes, domains)

        Returns:
            Self for chaining
        """
        return self._section("dataset", values)

    def network(self, **values: Any) -> "RunConfigBuilder":
        """Network options (channels, activation, batch_norm, insert_positions, ...)"""
        return self._section("network", values)

    def augmentor(self, **values: Any) -> "RunConfigBuilder":
        """Augmentor options (kind, p, eps, fixed_scale, ...)"""
        return self._section("augmentor", values)

    def training(self, **values: Any) -> "RunConfigBuilder":
        """Optimizer and protocol options (epochs, batch_size, lr, seed, held_out, ...)"""
        return self._section("training", values)

    def sweep(self, **values: Any) -> "RunConfigBuilder":
        """Sweep options (name, values, seeds, held_outs, jobs)"""
        return self._section("sweep", values)

    def output_dir(self, path: str) -> "RunConfigBuilder":
        self._config["output_dir"] = str(path)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return dict(self._config)

    def build(self) -> RunConfig:
        """
        Validate and build the configuration

        Raises:
            ConfigValidationError: On unknown keys or invalid values
        """
        return RunConfig.from_dict(self._config)
