"""Exception types shared across the package."""


class FedsiaError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(FedsiaError, ValueError):
    """Array dimensions do not match what an operation requires."""


class NumericError(FedsiaError, ValueError):
    """A parameter or input contains NaN or infinity."""


class FormatError(FedsiaError, ValueError):
    """A data file cannot be parsed; the message names the offending row."""


class ProtocolError(FedsiaError, RuntimeError):
    """Client updates are inconsistent with the current global state."""


class ConfigError(FedsiaError, ValueError):
    """A run configuration is invalid; raised before any computation."""
