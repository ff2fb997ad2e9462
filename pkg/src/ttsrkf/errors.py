"""Exception hierarchy shared by the library, the baselines and the CLI."""


class TTSRKFError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(TTSRKFError, ValueError):
    pass


class DomainError(InvalidArgument):
    """An input lies outside the domain of a feature map."""


class ResourceLimitError(TTSRKFError):
    """A dense reconstruction would exceed the configured size cap."""


class NumericalFailure(TTSRKFError, ArithmeticError):
    """A filter produced a non-finite or inadmissible intermediate.

    ``state`` holds the filter state from before the failing step, so a
    caller can inspect it or continue from it.
    """

    def __init__(self, message, state=None, step=None):
        super().__init__(message)
        self.state = state
        self.step = step


class ConfigError(TTSRKFError):
    pass


class DataIOError(TTSRKFError, OSError):
    pass
