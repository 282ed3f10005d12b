"""Exception hierarchy shared by every module, with CLI exit codes attached."""


class PacaError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(PacaError):
    """Invalid configuration or usage (bad flag values, impossible settings)."""

    exit_code = 2


class ContractError(PacaError):
    """A call violated an operation's precondition (shape/name mismatch, range)."""

    exit_code = 2


class DataError(PacaError):
    """Unreadable, malformed, or missing input data."""

    exit_code = 3


class NumericalError(PacaError):
    """Non-finite loss or a numerical routine that failed after regularization."""

    exit_code = 4


class IntegrityError(PacaError):
    """Corrupt checkpoint or cache: manifest/blob mismatch, naming the entry."""

    exit_code = 5
