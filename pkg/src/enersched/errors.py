"""Exception hierarchy.

Each family maps to one CLI exit code: configuration problems exit 2,
bad or insufficient data exit 3, broken internal invariants exit 4.
"""


class EnerschedError(Exception):
    exit_code = 1


class ConfigError(EnerschedError):
    """Malformed configuration, bad arguments, or unknown identifiers."""

    exit_code = 2


class ParseError(ConfigError):
    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class ValidationError(ConfigError):
    pass


class UnknownMachineError(ConfigError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class ContractViolation(ConfigError, ValueError):
    """A precondition of an operation was not met by the caller."""


class DataError(EnerschedError):
    exit_code = 3


class InsufficientDataError(DataError):
    pass


class DegenerateFitError(DataError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class AttributionUndefinedError(DataError):
    pass


class NoDataError(DataError):
    pass


class PlanningError(DataError):
    pass


class UnknownPathError(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class SimulationError(EnerschedError):
    exit_code = 3


class InvariantViolation(EnerschedError):
    exit_code = 4
