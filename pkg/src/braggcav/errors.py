"""Exception and warning types raised by the simulator."""


class BraggCavError(Exception):
    """Base class for all simulator errors."""


class NumericGuardError(BraggCavError):
    """A numerical safety check tripped (truncation, step size, eigensolve)."""


class TruncationTooSmall(NumericGuardError):
    pass


class StepTooLarge(NumericGuardError):
    pass


class EigensolveFailure(NumericGuardError):
    pass


class NonPhysicalGram(NumericGuardError):
    pass


class DimensionMismatch(BraggCavError, ValueError):
    pass


class GridMismatch(BraggCavError, ValueError):
    pass


class TooFewPeaks(BraggCavError, ValueError):
    pass


class DegenerateInput(BraggCavError, ValueError):
    pass


class ConfigError(BraggCavError):
    exit_code = 3


class ParseError(ConfigError):
    exit_code = 2


class ValidationError(ConfigError):
    exit_code = 3

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class NonIntegerWarning(UserWarning):
    pass


class NonPositiveDiagonal(UserWarning):
    pass
