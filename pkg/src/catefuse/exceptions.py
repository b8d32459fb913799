"""Exception hierarchy shared across the package."""


class CatefuseError(Exception):
    """Base class for all errors raised by catefuse."""


class DataError(CatefuseError):
    """Malformed or out-of-contract input data (parsing, domains, shapes)."""


class PositivityError(DataError):
    """A treatment assignment probability left the open interval (0, 1)."""


class ConvergenceError(CatefuseError):
    """The coordinate-descent solver hit its sweep budget before converging.

    Carries the last iterate so callers can inspect or resume.
    """

    def __init__(self, message, beta=None, intercept=None, n_sweeps=None):
        super().__init__(message)
        self.beta = beta
        self.intercept = intercept
        self.n_sweeps = n_sweeps


class UsageError(CatefuseError):
    """Invalid command-line usage or configuration."""
