"""
Test infrastructure checks

pytest configuration, shared fixtures and markers.
"""

import pytest


def test_pytest_configured():
    """Test pytest runs"""
    assert True


def test_tensor_fixtures(x64, x32):
    """Test the shared activation fixtures"""
    assert x64.shape == (4, 3, 5, 5)
    assert x64.dtype == "float64"
    assert x32.dtype == "float32"


def test_tiny_config_fixture(tiny_train_config):
    """Test the tiny training config validates"""
    assert tiny_train_config.validate() is tiny_train_config
    assert tiny_train_config.net.slots == (0, 1, 2, 3)


def test_tiny_benchmark_fixture(tiny_benchmark):
    """Test the tiny benchmark has four domains of 24 images"""
    assert sorted(tiny_benchmark) == ["cool", "photo", "sketch", "warm"]
    assert all(len(s) == 24 for s in tiny_benchmark.values())


@pytest.mark.unit
def test_unit_marker():
    """Test the unit marker"""
    assert True


@pytest.mark.integration
def test_integration_marker():
    """Test the integration marker"""
    assert True


@pytest.mark.slow
def test_slow_marker():
    """Test the slow marker"""
    assert True
