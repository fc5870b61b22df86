"""Exception hierarchy shared by the simulation and inference modules."""


class SeedbankError(Exception):
    """Base class for every error raised by this package."""


class DomainError(SeedbankError, ValueError):
    """A parameter lies outside its admissible domain."""


class InestimableError(SeedbankError, ArithmeticError):
    """The data carry no information about a quantity (zero denominator)."""


class CollinearityError(InestimableError):
    """A design or Gram matrix is singular; ``parameters`` names the unidentified ones."""

    def __init__(self, message, parameters=()):
        super().__init__(message)
        self.parameters = tuple(parameters)


class ParseError(SeedbankError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}: "
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)
        self.line = line
        self.path = path
