"""
Exception types raised by the uavmec package.
"""


class UavMecError(Exception):
    """Base class for all errors raised by uavmec."""


class ConfigError(UavMecError):
    """A configuration document could not be parsed or failed validation."""


class PlanError(ConfigError):
    """An experiment plan is malformed or inconsistent."""


class InfeasibleActionError(UavMecError, ValueError):
    """A scheduling action violates the feasibility mask of its local state."""


class MobilityError(UavMecError, ValueError):
    """A position left the simulation area."""


class NumericalError(UavMecError, ArithmeticError):
    """A NaN or Inf appeared in a forward or backward pass."""


class NonStochasticKernelError(UavMecError, ValueError):
    """A transition kernel row does not sum to one."""


class EmptyMaskError(UavMecError, ValueError):
    """No feasible action was offered to an acting policy."""


class WindowReconstructionError(UavMecError):
    """A history window cannot be rebuilt from the replay memory."""


class CheckpointError(UavMecError):
    """A checkpoint file is unreadable or belongs to another configuration."""


class DivergenceError(UavMecError):
    """Training produced a non-finite loss."""
