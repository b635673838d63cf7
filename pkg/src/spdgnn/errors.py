"""Exception hierarchy shared across the package."""


class SpdGnnError(Exception):
    """Base class for every error raised by spdgnn."""


# numerical kernel
class NonFinite(SpdGnnError, ValueError):
    pass


class NoConvergence(SpdGnnError, ArithmeticError):
    pass


class Overflow(SpdGnnError, OverflowError):
    pass


class NotPositiveDefinite(SpdGnnError, ValueError):
    pass


class NotSymmetric(SpdGnnError, ValueError):
    pass


class DimensionMismatch(SpdGnnError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class RankDeficient(SpdGnnError, ValueError):
    pass


class OutsideBall(SpdGnnError, ValueError):
    pass


# autodiff / losses
class NotScalarLoss(SpdGnnError, ValueError):
    pass


class LabelOutOfRange(SpdGnnError, IndexError):
    pass


class NegativeLambda(SpdGnnError, ValueError):
    pass


# graphs and data
class EmptyGraph(SpdGnnError, ValueError):
    pass


class DatasetError(SpdGnnError):
    pass


class ParseError(DatasetError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}" + (f":{line}" if line is not None else "") + ": "
        super().__init__(where + message)


class IndexOutOfRange(ParseError):
    pass


class InconsistentCounts(DatasetError, ValueError):
    pass


class Disconnected(SpdGnnError, ValueError):
    pass


class TooLargeForExact(SpdGnnError, ValueError):
    pass


# training harness
class ConfigError(SpdGnnError, ValueError):
    pass


class DivergedTraining(SpdGnnError, ArithmeticError):
    pass


class NonFiniteGradient(DivergedTraining):
    pass
