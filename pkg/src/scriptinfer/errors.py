class ShapeError(ValueError):
    """Array dimensions disagree at an operation boundary."""


class NonFiniteError(FloatingPointError):
    """A loss or intermediate value became NaN or infinite."""


class FormatError(ValueError):
    """An input file violates its declared format."""
