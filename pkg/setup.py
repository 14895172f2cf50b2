from setuptools import setup, find_packages

setup(
    name="featshift",
    version="0.1.0",
    description="Stochastic feature-statistics augmentation (DSU) for domain generalization, with a desk-scale benchmark",
    package_dir={"": "src"},
    packages=find_packages(where="src"),
    python_requires=">=3.10",
    install_requires=[
        "numpy>=1.24.0",
        "pandas>=2.0.0",
        "pyyaml>=6.0",
    ],
    extras_require={
        "dev": [
            "pytest>=7.4.0",
            "pytest-cov>=4.1.0",
            "pytest-xdist>=3.3.0",
            "black>=23.0.0",
            "mypy>=1.5.0",
        ],
    },
    entry_points={"console_scripts": ["featshift=featshift.cli:main"]},
)
