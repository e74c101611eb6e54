"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input violates a documented precondition."""


class UnsupportedInputError(InvalidInputError):
    """Input is valid in general but outside what an oracle handles."""


class NumericalFailure(ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class FormatError(ValueError):
    """A binary or text file does not follow the expected layout."""
