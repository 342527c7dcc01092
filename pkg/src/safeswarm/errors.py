"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Input values lie outside an operation's mathematical domain."""


class ContractError(RuntimeError):
    """A caller violated an API precondition."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite intermediates."""


class PlacementError(RuntimeError):
    """Rejection sampling could not place entities without overlap."""


class CheckpointError(RuntimeError):
    """A checkpoint file is malformed or shape-incompatible."""


class ConfigError(ValueError):
    """A configuration file or override is invalid."""


class MetricsParseError(ValueError):
    """A metrics file could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number
