"""Exception types shared across the toolkit.

The CLI maps these onto process exit codes: configuration problems exit
with 2, data/parse problems with 3, and numeric or domain violations
with 4.
"""


class DpfairError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(DpfairError, ValueError):
    """An argument violates a documented precondition."""


class DomainError(DpfairError, ValueError):
    """An analytic expression was evaluated outside its hypothesis."""


class InvalidModeError(DpfairError, ValueError):
    """A report was supplied in the wrong bias mode."""


class NormalizerError(DpfairError, ArithmeticError):
    """A data-dependent normalizer was zero or negative.

    Carries the offending value so the caller can decide between
    clipping the inputs or switching to a fixed-normalizer proxy.
    """

    def __init__(self, normalizer: float, message: str | None = None):
        self.normalizer = float(normalizer)
        super().__init__(
            message or f"data-dependent normalizer is not positive: {self.normalizer!r}"
        )


class DataError(DpfairError, ValueError):
    """A data file could not be parsed or violates raw-data invariants.

    ``line`` is the 1-based line number of the offending row when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(DpfairError, ValueError):
    """An experiment configuration is malformed or inconsistent."""
