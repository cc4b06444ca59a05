from setuptools import setup, find_packages

setup(
    name="polyp-counter",
    version="0.1",
    packages=find_packages(exclude=["tests"]),
    py_modules=["main"],
    install_requires=[
        "pyyaml>=6.0",
        "numpy>=1.24",
        "scipy>=1.10",
        "joblib>=1.2",
    ],
    extras_require={
        "test": ["pytest>=7.0", "pytest-timeout>=2.1"],
    },
    entry_points={
        "console_scripts": ["polyp-count=main:main"],
    },
    python_requires=">=3.10",
)
