"""Exception types raised by the package.

Most are ValueError subclasses so callers that only care about "bad input"
can catch the base class; the CLI maps them onto exit codes.
"""


class NotSkewError(ValueError):
    """Matrix is not antisymmetric within tolerance."""


class NotRotationError(ValueError):
    """Matrix fails orthogonality or det(R) = 1 within tolerance."""


class SingularMatrixError(ValueError):
    """Matrix is rank-deficient where a full-rank input is required."""


class TimeOutOfRangeError(ValueError):
    """Flow time outside [0, 1]."""


class BadKError(ValueError):
    """Requested sample count exceeds the number of available points."""


class WrongPointCountError(ValueError):
    """Point cloud does not have the point count the encoder expects."""


class UnknownCategoryError(ValueError):
    """Category id outside the embedding table."""


class UnknownKindError(ValueError):
    """Shape kind string not recognised by the generator."""


class DimMismatchError(ValueError):
    """Tensor dimensions incompatible with the layer."""


class ShapeMismatchError(ValueError):
    """Gradient/parameter shape disagreement in the optimizer."""


class EmptyDatasetError(ValueError):
    """Training or evaluation invoked on an empty instance list."""


class BadCheckpointError(ValueError):
    """Checkpoint manifest and blob disagree, or required fields missing."""


class ReportInvariantError(ValueError):
    """Evaluation report violates a metric invariant at write time."""


class BadConfigError(ValueError):
    """Configuration file missing, malformed, or carrying unknown keys."""


class GraphNotRecordedError(RuntimeError):
    """backward() called without a live forward tape."""
