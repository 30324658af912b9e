"""Exception types shared across the package."""


class FgdError(Exception):
    """Base class for all errors raised by fgdistill."""


class DimensionError(FgdError):
    """Operand shapes are incompatible with the requested operation."""


class ParameterError(FgdError):
    """A hyper-parameter or argument is outside its valid range."""


class GraphError(FgdError):
    """The autodiff graph was used in violation of its contract."""


class OracleError(FgdError):
    """The finite-difference oracle hit a non-finite function value."""


class ConfigError(FgdError):
    """A run configuration file or value is invalid."""


class NonFiniteLossError(FgdError):
    """Training produced a NaN/Inf loss; carries a diagnostic dump."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump or {}
