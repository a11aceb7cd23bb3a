"""Exception hierarchy shared by all modules."""


class RobustGNEError(Exception):
    """Base class for every error raised by the package."""


class DimensionMismatch(RobustGNEError, ValueError):
    pass


class OutOfRange(RobustGNEError, ValueError):
    pass


class ZeroRow(RobustGNEError, ValueError):
    def __init__(self, row):
        super().__init__(f"row {row} of A is identically zero")
        self.row = row


class Infeasible(RobustGNEError):
    pass


class Unbounded(RobustGNEError):
    pass


class CenterOutside(RobustGNEError, ValueError):
    pass


class NonFiniteOutput(RobustGNEError, FloatingPointError):
    pass


class UnsupportedModel(RobustGNEError, TypeError):
    pass


class InvalidDistributionParams(RobustGNEError, ValueError):
    pass


class EmptyDomain(Infeasible):
    pass


class UnsupportedKind(RobustGNEError, TypeError):
    pass


class EmptyAfterTightening(Infeasible):
    pass


class NotPositiveDefinite(RobustGNEError, ValueError):
    pass


class DegenerateInput(RobustGNEError, ValueError):
    pass


class NoFeasiblePiece(RobustGNEError):
    pass


class MaxIterExceeded(RobustGNEError):
    pass


class NonReproduciblePipeline(RobustGNEError):
    pass


class EmptyRegion(Infeasible):
    pass


class ConfigError(RobustGNEError, ValueError):
    pass
