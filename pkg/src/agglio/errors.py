"""Exception hierarchy shared across the package."""


class AgglioError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(AgglioError, ValueError):
    pass


class DomainError(AgglioError, ValueError):
    """A label lies outside the range of the activation it must be inverted through."""

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


class DimensionError(AgglioError, ValueError):
    pass


class UnsupportedConstantsError(AgglioError):
    """No ELSC/ELSS constants are known for the requested activation or regime."""


class ElscFailureError(AgglioError):
    """The strong-convexity constant is not positive at the requested temperature."""

    def __init__(self, message, lam=None, tau=None):
        super().__init__(message)
        self.lam = lam
        self.tau = tau


class DivergenceError(AgglioError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TooLargeError(AgglioError):
    pass


class IngestionError(AgglioError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(AgglioError):
    pass
