"""Exception hierarchy shared across the package."""


class RnaLabError(Exception):
    """Base class for every error raised by rnalab."""


class ShapeError(RnaLabError, ValueError):
    """Operand shapes are incompatible."""


class EmptyBatchError(RnaLabError, ValueError):
    pass


class LabelError(RnaLabError, ValueError):
    pass


class RankError(RnaLabError, ValueError):
    pass


class ConfigError(RnaLabError, ValueError):
    """Invalid configuration, mode mismatch or bad argument."""


class DegenerateFeaturesError(RnaLabError, ArithmeticError):
    """A mean feature norm collapsed to (almost) zero and cannot divide."""


class NumericalError(RnaLabError, ArithmeticError):
    """Training produced a non-finite value."""

    def __init__(self, message, last_good_iteration=None):
        super().__init__(message)
        self.last_good_iteration = last_good_iteration


class StateError(RnaLabError, RuntimeError):
    pass


class FormatError(RnaLabError, ValueError):
    """A file on disk does not match the expected container layout."""
