"""
Shared pytest fixtures

Small random tensors, a tiny backbone, a tiny benchmark and a fast training
config shared across the suite.
"""

import numpy as np
import pytest


@pytest.fixture
def np_rng() -> np.random.Generator:
    """Seeded numpy generator for test inputs"""
    return np.random.default_rng(1234)


@pytest.fixture
def x64(np_rng):
    """
    Random float64 activations [4, 3, 5, 5]

    Example:
        def test_something(x64):
            stats = instance_stats(x64)
    """
    from featshift.ndcore import Tensor

    return Tensor(np_rng.normal(size=(4, 3, 5, 5)) * 1.5 + 0.3)


@pytest.fixture
def x32(np_rng):
    """Random float32 activations [4, 3, 5, 5]"""
    from featshift.ndcore import Tensor

    return Tensor(np_rng.normal(size=(4, 3, 5, 5)) * 1.5 + 0.3, dtype="float32")


@pytest.fixture
def tiny_spec():
    """Default backbone at 16x16 with narrow channels (slots 0..3)"""
    from featshift.net import default_spec

    return default_spec(channels=(4, 8), stem_channels=4, num_classes=4, input_size=16, insert_positions=(0, 1, 2))


@pytest.fixture
def tiny_manifest():
    """Default four domains, 6 images per class at 16x16"""
    from featshift.data import default_manifest

    return default_manifest(n_per_class=6, image_size=16, seed=0)


@pytest.fixture
def tiny_benchmark(tiny_manifest):
    from featshift.data import build_benchmark

    return build_benchmark(tiny_manifest)


@pytest.fixture
def tiny_train_config(tiny_spec, tiny_manifest):
    """Two epochs on the tiny benchmark; trains in about a second"""
    from featshift.augment import AugmentorConfig
    from featshift.train import TrainConfig

    return TrainConfig(
        epochs=2,
        batch_size=8,
        lr=0.05,
        seed=0,
        aug=AugmentorConfig(kind="DSU", p=0.5),
        net=tiny_spec,
        dataset=tiny_manifest,
        held_out="sketch",
        val_fraction=0.25,
    )


@pytest.fixture
def tiny_run_config_dict():
    """Run-config document matching tiny_train_config"""
    return {
        "dataset": {"n_per_class": 6, "image_size": 16, "seed": 0},
        "network": {"channels": [4, 8], "stem_channels": 4, "insert_positions": [0, 1, 2]},
        "augmentor": {"kind": "DSU", "p": 0.5},
        "training": {"epochs": 1, "batch_size": 8, "seed": 0, "held_out": "sketch", "val_fraction": 0.25},
    }


@pytest.fixture(autouse=True)
def _quiet_fault_flag(monkeypatch):
    """Never inherit the selftest fault flag from the environment"""
    monkeypatch.delenv("FEATSHIFT_SELFTEST_FAULT", raising=False)
