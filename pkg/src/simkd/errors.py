"""Exception hierarchy shared by every module."""


class SimKDError(Exception):
    """Base class for all errors raised by the package."""


class DimensionError(SimKDError, ValueError):
    """Operands have incompatible shapes."""


class ConfigurationError(SimKDError, ValueError):
    """A specification or configuration value is invalid."""


class DomainError(SimKDError, ValueError):
    """An argument lies outside the domain of a formula."""


class BuildError(ConfigurationError):
    """A layer stack cannot be assembled."""


class NumericError(SimKDError, ArithmeticError):
    """A computation produced a non-finite value."""


class UsageError(SimKDError, RuntimeError):
    """An API was called out of order or with mismatched state."""


class InputError(SimKDError, ValueError):
    """Input data is empty or malformed."""


class CorruptionError(SimKDError, IOError):
    """A binary file failed validation."""
