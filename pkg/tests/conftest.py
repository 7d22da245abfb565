"""
Test configuration for pytest
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add the src directory to the Python path
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

from uavmec.config import SystemConfig  # noqa: E402


@pytest.fixture
def cfg():
    """Default (experiment-table) configuration."""
    return SystemConfig()


@pytest.fixture
def small_cfg():
    """A small system that simulates quickly: 100 m area, 2 BSs, 3 users."""
    return SystemConfig(
        num_bs=2,
        area_side=100.0,
        num_mus=3,
        history_len=4,
        replay_capacity=200,
        minibatch=8,
        hidden_size=8,
        queue_clip=5,
        training_epochs=60,
        target_update_period=10,
        log_every=20,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
