"""Exception hierarchy shared by every vrbqn module."""


class VRBQNError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VRBQNError, ValueError):
    """Invalid hyperparameter, range or geometry."""


class ShapeError(VRBQNError, ValueError):
    """Array dimensions do not match what the operation expects."""


class StateError(VRBQNError, RuntimeError):
    """Operation is not valid in the object's current state."""


class NumericError(VRBQNError, FloatingPointError):
    """Non-finite values reached a numeric routine."""


class FormatError(VRBQNError, ValueError):
    """A serialized artifact is corrupt or has an unknown layout."""
