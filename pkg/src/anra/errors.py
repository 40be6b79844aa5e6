"""Exception hierarchy.

Every error carries the process exit code the CLI uses for it: 2 for
parameter/validation problems, 3 for data or file-format problems and 4 when
an estimate cannot be formed at all.
"""


class AnraError(Exception):
    exit_code = 1


class ParameterError(AnraError, ValueError):
    exit_code = 2


class DimensionError(ParameterError):
    """Grid mismatch or a field too small for the requested stencil/window."""


class HistoryError(ParameterError):
    """Not enough frames behind index k for a one-sided temporal kernel."""


class StabilityError(ParameterError):
    """The explicit solver would need more sub-steps than allowed."""


class InfeasibleParameterError(ParameterError):
    """Non-positive diffusivity handed to the forward solver."""


class DegenerateAttentionError(AnraError):
    """RTC weights vanish after min-subtraction (uniform |dT/dt|)."""

    exit_code = 4


class EmptyFieldError(DegenerateAttentionError):
    """Every pixel of the derivative field is masked."""


class EstimationError(AnraError):
    """No pixel survived masking; ``counts`` lists survivors per stage."""

    exit_code = 4

    def __init__(self, message, counts=None):
        super().__init__(message)
        self.counts = dict(counts or {})


class FormatError(AnraError):
    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(AnraError):
    exit_code = 3


class IngestionError(DataError):
    pass
