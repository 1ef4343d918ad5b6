"""Exception types shared across the package."""


class StrategicMDPError(Exception):
    """Base class for all package-specific errors."""


class InvalidIndexError(StrategicMDPError):
    """A step, state, action, feedback, type, or candidate index is out of range."""


class ConfigError(StrategicMDPError):
    """A configuration value is missing, malformed, or inconsistent."""


class ParseError(StrategicMDPError):
    """A config file could not be parsed; message carries the location."""


class ValidationError(StrategicMDPError):
    """A model or table violates a structural invariant (shapes, simplex rows, bounds)."""


class CapacityError(StrategicMDPError):
    """An enumeration would exceed a configured cap."""


class RealizabilityError(StrategicMDPError):
    """A strict run requires realizability and the check failed."""
