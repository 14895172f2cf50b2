"""
Test lazy loading behavior in __init__.py

These tests verify that:
1. pandas and the training stack are NOT imported on module load
2. Lazy imports return correct objects
3. Repeated imports return same object (idempotent)
4. All exported symbols are accessible
"""

import subprocess
import sys

import pytest


def test_lazy_loading_heavy_modules_not_imported():
    """Verify pandas and the train module are not imported on module load"""
    # Fresh interpreter so earlier tests cannot have imported them already
    code = (
        "import sys, featshift; "
        "print('pandas' in sys.modules, 'featshift.train' in sys.modules, 'featshift.net' in sys.modules)"
    )
    completed = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True)
    assert completed.stdout.split() == ["False", "False", "False"]


def test_lazy_import_returns_correct_object():
    """Verify lazy imports resolve to the defining module's objects"""
    import featshift
    from featshift.augment import AugmentorConfig
    from featshift.ndcore.tensor import Tensor
    from featshift.train import train_run

    assert featshift.AugmentorConfig is AugmentorConfig
    assert featshift.Tensor is Tensor
    assert featshift.train_run is train_run
    assert hasattr(featshift.RunConfig, "from_dict")
    assert hasattr(featshift.SweepResult, "aggregate")


def test_lazy_import_idempotent():
    """Verify repeated imports return same object"""
    import featshift

    assert featshift.Rng is featshift.Rng
    assert featshift.instance_stats is featshift.instance_stats


def test_all_symbols_accessible():
    """Verify all __all__ symbols work"""
    import featshift

    for name in featshift.__all__:
        obj = getattr(featshift, name)
        assert obj is not None, f"Symbol {name} should be accessible"


def test_invalid_attribute_raises_error():
    """Verify accessing invalid attribute raises AttributeError"""
    import featshift

    with pytest.raises(AttributeError) as exc_info:
        _ = featshift.NonExistentClass

    assert "NonExistentClass" in str(exc_info.value)


def test_version_accessible():
    """Verify __version__ is accessible"""
    import featshift

    assert isinstance(featshift.__version__, str)
    assert len(featshift.__version__) > 0
