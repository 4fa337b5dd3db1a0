"""Exception hierarchy shared by all modules.

CLI exit-code mapping: usage errors exit 1, data errors exit 2, numeric
failures exit 3 (see :mod:`amfd.cli`).
"""


class AmfdError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(AmfdError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteValue(AmfdError):
    """A NaN or Inf was found where only finite values are allowed."""


class EmptyInput(AmfdError):
    """An operation received an empty operand it cannot handle."""


class BadAxis(AmfdError):
    """A reduction axis is out of range or repeated."""


class NotScalar(AmfdError):
    """backward() was called on a non-scalar tensor."""


class PyramidMismatch(AmfdError):
    """Feature pyramids differ in level count, shape, or stride."""


class WrongMode(AmfdError):
    """A distillation operation was called under an incompatible plan mode."""


class BadSpec(AmfdError):
    """A dataset or experiment specification is invalid."""


class NonFiniteLoss(AmfdError):
    """Training produced a non-finite loss; carries the failing step."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class NoGroundTruth(AmfdError):
    """Evaluation was requested on a split with no usable ground truth."""


class DataError(AmfdError):
    """A data file is missing, unreadable, or malformed."""
