"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Arguments violate a documented precondition (shape, range, duplicates)."""


class DegenerateInputError(ValueError):
    """Input is well-formed but numerically degenerate, e.g. a zero-norm gradient."""


class UndefinedRateError(ZeroDivisionError):
    """The reference run made no progress, so the loss-rate ratio is undefined."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class ConfigError(ValueError):
    """Experiment configuration failed schema validation."""
