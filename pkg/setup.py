"""
Setup script for the uavmec package
"""

from setuptools import find_packages, setup

DEV_PACKAGES = ("pytest", "pytest-cov", "flake8", "black", "isort", "scipy")

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

with open("requirements.txt", "r", encoding="utf-8") as fh:
    lines = [line.strip() for line in fh if line.strip() and not line.startswith("#")]

requirements = [line for line in lines if not line.startswith(DEV_PACKAGES)]
dev_requirements = [line for line in lines if line.startswith(DEV_PACKAGES)]

setup(
    name="uav-mec-sim",
    version="0.1.0",
    author="uavmec Contributors",
    description="Simulator and DRQN trainer for UAV-assisted mobile edge computing",
    long_description=long_description,
    long_description_content_type="text/markdown",
    package_dir={"": "src"},
    packages=find_packages(where="src"),
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "Topic :: Scientific/Engineering",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
    ],
    python_requires=">=3.9",
    install_requires=requirements,
    extras_require={"dev": dev_requirements},
    entry_points={
        "console_scripts": [
            "uav-mec=uavmec.cli:main",
        ],
    },
)
