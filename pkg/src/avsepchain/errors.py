"""Exception hierarchy shared by every avsepchain module."""


class AVSepChainError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(AVSepChainError, ValueError):
    pass


class InvalidStateError(AVSepChainError, RuntimeError):
    pass


class FormatError(AVSepChainError, ValueError):
    """A file on disk does not match its declared container format."""


class DegenerateInputError(AVSepChainError, ValueError):
    """Zero-power signal where a non-zero one is required (targets, mixture sources)."""


class NumericError(AVSepChainError, ArithmeticError):
    pass


class IncompatibleCheckpointError(AVSepChainError, RuntimeError):
    pass


class ConfigError(AVSepChainError, ValueError):
    pass
