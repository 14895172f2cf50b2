from pathlib import Path


def test_project_structure_exists():
    """Test the project directory layout"""
    # Project root, both in Docker (/app) and in a local checkout
    base_path = Path(__file__).parent.parent

    assert base_path.exists()
    assert (base_path / "src" / "featshift").exists()
    assert (base_path / "src" / "featshift" / "ndcore").exists()
    assert (base_path / "src" / "featshift" / "config").exists()
    assert (base_path / "tests").exists()
    # README.md may not be mounted in the Docker test environment
    if base_path.name != "app":
        assert (base_path / "README.md").exists()
        assert (base_path / "DESIGN.md").exists()


def test_package_files_exist():
    """Test the packaging files"""
    base_path = Path(__file__).parent.parent

    assert (base_path / "src" / "featshift" / "__init__.py").exists()
    assert (base_path / "setup.py").exists()
    assert (base_path / "pyproject.toml").exists()


def test_package_importable():
    """Test the package imports and has a version"""
    import featshift

    assert featshift.__version__ is not None
