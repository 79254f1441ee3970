"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (CLI exit code 2),
numeric blow-ups from :class:`NumericFailure` (CLI exit code 3).
"""


class CartoflowError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(CartoflowError, ValueError):
    pass


class NumericFailure(CartoflowError, ArithmeticError):
    pass


# geometry
class DegenerateInput(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


# dataset
class SchemaError(ValidationError):
    pass


class NonUniformT(ValidationError):
    pass


class NegativeCount(ValidationError):
    pass


class OutOfBounds(ValidationError):
    pass


class WindowOutOfRange(ValidationError):
    pass


class InsufficientHistory(ValidationError):
    pass


# model
class ShapeMismatch(ValidationError):
    pass


class MissingForwardCache(CartoflowError, RuntimeError):
    pass


class NonFiniteActivation(NumericFailure):
    pass


class NonFiniteLoss(NumericFailure):
    pass


# evaluation
class LengthMismatch(ValidationError):
    pass


class ZeroVariance(ValidationError):
    pass


class EmptyCell(ValidationError):
    pass


class NoScoresCollected(ValidationError):
    pass


# synth
class InvalidConfig(ValidationError):
    pass
