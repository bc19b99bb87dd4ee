"""Exception and warning types shared by every pipeline stage.

``InputError`` subclasses describe bad data or configuration (CLI exit code 2);
``ComputationError`` subclasses describe numerical failures on valid input
(CLI exit code 1).
"""


class ConnectomeError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


# ---------- input / configuration ----------


class InputError(ConnectomeError, ValueError):
    """Raised for invalid input data, parameters or configuration."""

    exit_code = 2


class ConfigError(InputError):
    """Raised when the run configuration cannot be parsed or validated."""

    pass


class InvalidParameter(InputError):
    """Raised when a numeric argument is outside its documented range."""

    pass


class MalformedRow(InputError):
    def __init__(self, line: int, reason: str):
        self.line = line
        super().__init__(f"malformed row at line {line}: {reason}")


class DuplicateKey(InputError):
    def __init__(self, date, ticker: str, line: int | None = None):
        self.date = date
        self.ticker = ticker
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate (date, ticker) = ({date}, {ticker}){where}")


class NonPositivePrice(InputError):
    def __init__(self, message: str = "prices must be strictly positive", line: int | None = None):
        self.line = line
        super().__init__(f"{message} (line {line})" if line is not None else message)


class UnfillableColumn(InputError):
    def __init__(self, ticker: str):
        self.ticker = ticker
        super().__init__(f"column {ticker!r} starts with a gap and cannot be forward-filled")


class EmptyEra(InputError):
    def __init__(self, label: str):
        self.label = label
        super().__init__(f"era {label!r} captures no rows of the panel")


class ZeroVolumeWindow(InputError):
    def __init__(self, t: int):
        self.t = t
        super().__init__(f"window starting at index {t} has zero total volume")


class WindowTooLong(InputError):
    """Raised when a window length exceeds the available series length."""

    pass


class AssetOrderMismatch(InputError):
    """Raised when two objects disagree on asset order."""

    pass


class DimensionMismatch(InputError):
    """Raised when matrix / vector dimensions are inconsistent."""

    pass


class LengthMismatch(InputError):
    """Raised when paired series differ in length."""

    pass


class EmptyReferenceSet(InputError):
    """Raised when a Risk-On reference asset list is empty or unknown."""

    pass


class EmptyInput(InputError):
    """Raised when an aggregation receives nothing to aggregate."""

    pass


class KTooLarge(InputError):
    def __init__(self, k: int, n: int):
        self.k = k
        self.n = n
        super().__init__(f"k={k} exceeds the number of samples ({n})")


class InsufficientData(InputError):
    """Raised when a statistic needs more defined points than available."""

    pass


class InsufficientOverlap(InputError):
    """Raised when two date-indexed series share too few dates."""

    pass


# ---------- numerical ----------


class ComputationError(ConnectomeError, ArithmeticError):
    """Raised when a numerical stage fails on otherwise valid input."""

    exit_code = 1


class RankDeficient(ComputationError):
    def __init__(self, requested: int, available: int):
        self.requested = requested
        self.available = available
        super().__init__(f"requested rank {requested} but data has only {available} nonzero singular values")


class DegenerateInput(ComputationError):
    """Raised when ICA input has a zero-variance row."""

    pass


class DegenerateRow(ComputationError):
    def __init__(self, row: int):
        self.row = row
        super().__init__(f"row {row} is constant; cannot be z-scored")


class ZeroVarianceComponent(ComputationError):
    def __init__(self, row: int, which: str = ""):
        self.row = row
        self.which = which
        super().__init__(f"component row {row}{' of ' + which if which else ''} has zero variance")


class ZeroTotalVariance(ComputationError):
    """Raised when the stacked Icasso component set has no spread."""

    pass


class OverflowGuard(ComputationError):
    def __init__(self, index: int, value: float):
        self.index = index
        self.value = value
        super().__init__(f"cumulative factor sum {value:.3f} at index {index} is outside the overflow guard")


class SingularCovariance(ComputationError):
    """Raised when the regularised baseline covariance is still singular."""

    pass


class ZeroVector(ComputationError):
    """Raised for cosine similarity of a zero vector."""

    pass


class AsymmetricInput(ComputationError):
    def __init__(self, deviation: float):
        self.deviation = deviation
        super().__init__(f"matrix is not symmetric (max deviation {deviation:.3e})")


class NoPositiveEdges(ComputationError):
    """Raised when a connectivity matrix has no positive off-diagonal weight."""

    pass


class NotPSD(ComputationError):
    def __init__(self, min_eigenvalue: float):
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"covariance template is not positive semi-definite (min eigenvalue {min_eigenvalue:.3e})")


# ---------- warnings ----------


class ClusterImbalanceWarning(UserWarning):
    """Icasso cluster sizes deviate from the run count by more than 20%."""


class ZeroVarianceRowWarning(UserWarning):
    """A dMNC window contains a constant activation row."""


class NonConvergenceWarning(UserWarning):
    """The fixed-point ICA iteration reached max_iter."""
