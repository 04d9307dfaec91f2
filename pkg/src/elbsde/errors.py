"""Exception types raised across the pricing engine."""


class ElbsdeError(Exception):
    """Base class for all engine errors."""


class DegenerateHedgeBasis(ElbsdeError):
    """The bond/equity hedge system is singular at the requested time."""


class VanishingVariance(ElbsdeError):
    """Equity variance too small to express the equity hedge amount."""


class NotPSD(ElbsdeError):
    """Correlation matrix is not positive semi-definite."""


class DimMismatch(ElbsdeError):
    """Input dimension does not match the network."""


class NonFiniteGradient(ElbsdeError):
    """A NaN or Inf appeared during backpropagation."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class NegativeRate(ElbsdeError):
    """A tilted death intensity is negative."""


class ParseError(ElbsdeError):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class InvariantViolation(ElbsdeError):
    def __init__(self, field, message=""):
        super().__init__(f"{field}: {message}" if message else field)
        self.field = field


class MissingCheckpoint(ElbsdeError):
    pass


class UnknownCommand(ElbsdeError):
    pass
