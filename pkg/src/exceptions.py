"""
Error types raised by the simulator.

Input validation failures derive from ValueError, violated internal guarantees from
AssertionError, and exhausted randomized procedures from RuntimeError.
"""

from typing import Optional


class MixingError(Exception):
    """Base class for every error raised by this package."""


class NotSquare(MixingError, ValueError):
    pass


class NegativeEntry(MixingError, ValueError):
    def __init__(self, row: int, column: int, value: float):
        super().__init__(f"entry ({row}, {column}) is negative: {value}")
        self.row = row
        self.column = column
        self.value = value


class ColumnSumViolation(MixingError, ValueError):
    def __init__(self, column: int, total: float):
        super().__init__(f"column {column} sums to {total}, expected 1")
        self.column = column
        self.total = total


class DimensionMismatch(MixingError, ValueError):
    pass


class DomainError(MixingError, ValueError):
    pass


class TooFewStates(MixingError, ValueError):
    pass


class PreconditionViolated(MixingError, ValueError):
    pass


class NotErgodic(MixingError, ValueError):
    pass


class NotReversible(MixingError, ValueError):
    pass


class ZeroStationaryProbability(MixingError, ValueError):
    pass


class ConfigTooCoarse(MixingError, ValueError):
    pass


class ConfigParseError(MixingError, ValueError):
    pass


class SchemaError(MixingError, ValueError):
    pass


class LemmaViolation(MixingError, AssertionError):
    pass


class ExhaustedRetries(MixingError, RuntimeError):
    def __init__(self, message: str, walk_calls: Optional[int] = None):
        super().__init__(message)
        self.walk_calls = walk_calls


class StepFailure(MixingError, RuntimeError):
    def __init__(self, step: int, message: str = "both preparation routes exhausted"):
        super().__init__(f"step {step}: {message}")
        self.step = step


class StepSizeUnderflow(MixingError, RuntimeError):
    pass
