"""
featshift - Stochastic feature-statistics augmentation for domain generalization
"""

__version__ = "0.1.0"

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from .analyze import ShiftReport, measure_shift
    from .augment import AugmentorConfig, apply, dsu, mix_style, p_ada_in
    from .config import RunConfig, RunConfigBuilder, load_run_config
    from .data import DatasetManifest, DomainSpec, SampleSet, build_benchmark, generate_domain
    from .featstats import BatchUncertainty, InstanceStats, batch_uncertainty, instance_stats
    from .ndcore import Graph, Tensor
    from .net import NetworkSpec, Params, build, default_spec, forward
    from .results import SweepResult
    from .rng import Rng
    from .selftest import run_selftest
    from .train import RunReport, TrainConfig, train_run


# Lazy imports keep `import featshift` free of pandas and the training stack
_LAZY = {
    "Tensor": "ndcore",
    "Graph": "ndcore",
    "InstanceStats": "featstats",
    "BatchUncertainty": "featstats",
    "instance_stats": "featstats",
    "batch_uncertainty": "featstats",
    "Rng": "rng",
    "AugmentorConfig": "augment",
    "apply": "augment",
    "dsu": "augment",
    "mix_style": "augment",
    "p_ada_in": "augment",
    "NetworkSpec": "net",
    "Params": "net",
    "build": "net",
    "default_spec": "net",
    "forward": "net",
    "DomainSpec": "data",
    "DatasetManifest": "data",
    "SampleSet": "data",
    "generate_domain": "data",
    "build_benchmark": "data",
    "TrainConfig": "train",
    "RunReport": "train",
    "train_run": "train",
    "SweepResult": "results",
    "ShiftReport": "analyze",
    "measure_shift": "analyze",
    "RunConfig": "config",
    "RunConfigBuilder": "config",
    "load_run_config": "config",
    "run_selftest": "selftest",
}


def __getattr__(name):
    module = _LAZY.get(name)
    if module is None:
        raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
    from importlib import import_module

    return getattr(import_module(f".{module}", __name__), name)


__all__ = sorted(_LAZY) + ["__version__"]
