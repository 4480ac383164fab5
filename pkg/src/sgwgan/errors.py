"""Exception hierarchy shared by every module."""


class SgwError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(SgwError, ValueError):
    """A precondition on an argument does not hold."""


class DimensionMismatch(InvalidInput):
    pass


class SizeMismatch(InvalidInput):
    pass


class ShapeMismatch(InvalidInput):
    pass


class RangeMismatch(InvalidInput):
    pass


class TooLarge(InvalidInput):
    pass


class TooSmall(InvalidInput):
    pass


class Unsorted(InvalidInput):
    pass


class MissingLabels(InvalidInput):
    pass


class InvalidSpec(InvalidInput):
    pass


class MalformedFile(SgwError):
    """A file does not follow its documented format.

    ``path`` and ``line`` (1-based, when known) locate the problem.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class EmptyFile(MalformedFile):
    pass


class NumericalOverflow(SgwError, ArithmeticError):
    pass


class StaleTape(SgwError, RuntimeError):
    pass


class NonFiniteLoss(SgwError, ArithmeticError):
    """Raised by the trainer; ``breakdown`` holds the offending step's terms."""

    def __init__(self, message, breakdown=None, step=None):
        self.breakdown = breakdown
        self.step = step
        super().__init__(message)
