"""
uavmec - UAV-assisted mobile edge computing simulator

Simulates mobile users offloading tasks to terrestrial base stations or a
UAV-mounted server, and learns a per-user offloading policy with a
recurrent deep Q-network.
"""

__version__ = "0.1.0"
__author__ = "uavmec Contributors"

from .config import SystemConfig, load_config, load_config_file  # noqa: E402
from .env import Action, MecEnvironment  # noqa: E402
from .exceptions import UavMecError  # noqa: E402
from .policies import SCHEMES, make_policy  # noqa: E402

__all__ = [
    "SystemConfig",
    "load_config",
    "load_config_file",
    "Action",
    "MecEnvironment",
    "UavMecError",
    "SCHEMES",
    "make_policy",
]
