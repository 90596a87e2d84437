"""Exception hierarchy shared by the sampling primitives and the pipeline."""


class QIPCRError(Exception):
    """Base class for all errors raised by this package."""


class ZeroVector(QIPCRError, ValueError):
    pass


class ZeroMatrix(QIPCRError, ValueError):
    pass


class RejectionBudgetExceeded(QIPCRError, RuntimeError):
    """Rejection sampling ran past its trial cap.

    Usually means heavy cancellation in the composed vector, i.e. a large
    C(V, w) ratio.
    """

    def __init__(self, message: str, trials: int = 0, accepted: int = 0):
        super().__init__(message)
        self.trials = trials
        self.accepted = accepted


class SketchRankDeficient(QIPCRError, RuntimeWarning):
    pass


class NoSingularValuesAboveThreshold(QIPCRError, RuntimeWarning):
    pass


class ThresholdAboveSpectrum(QIPCRError, RuntimeWarning):
    pass


class GapViolation(QIPCRError, ValueError):
    pass


class NotPSD(QIPCRError, ValueError):
    pass


class NotCentered(QIPCRError, ValueError):
    pass


class RankDeficient(QIPCRError, ValueError):
    pass


class NonFinite(QIPCRError, ValueError):
    pass


class InvalidRange(QIPCRError, ValueError):
    pass


class BudgetExceeded(QIPCRError, ValueError):
    """An error-budget term is larger than the target epsilon."""

    def __init__(self, message: str, terms: list[str] | None = None):
        super().__init__(message)
        self.terms = terms or []


class ParseError(QIPCRError, ValueError):
    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        super().__init__(message)
        self.row = row
        self.col = col


class DimensionMismatch(QIPCRError, ValueError):
    pass
