"""Exception hierarchy shared by the solvers, the data pipeline and the CLI."""


class GsiError(Exception):
    """Base class for every error raised on purpose by this project."""

    exit_code = 1


class ConfigError(GsiError, ValueError):
    """Invalid configuration value, unknown key or invalid argument."""

    exit_code = 2


class DataError(GsiError):
    """Input data is missing, unreadable or unusable."""

    exit_code = 3


class DegenerateInputError(DataError):
    """The observed matrix carries no signal (e.g. P_Omega(X) is all zeros)."""


class NumericalError(GsiError):
    """A numerical routine failed to converge or produced non-finite output."""

    exit_code = 4


class InsufficientDataError(NumericalError):
    """Too few samples to fit a diagnostic (e.g. a very short trace)."""
