"""Exception types shared across the package."""


class CalmError(Exception):
    """Base class for every error raised by this library."""


class ZeroVector(CalmError):
    """A vector with (near-)zero norm cannot be normalized."""


class OutOfRange(CalmError):
    """A scalar argument lies outside its admissible interval."""


class DimensionMismatch(CalmError):
    """Vector or matrix shapes are incompatible."""


class IndexOutOfRange(CalmError):
    """A pair references a sample index outside the embedding set."""


class SingleClass(CalmError):
    """Negative pairs require at least two distinct classes."""


class InsufficientPairs(CalmError):
    """A class (or pool) lacks positive or negative pairs."""


class DegenerateRange(CalmError):
    """The derived calibration range has zero or negative width."""


class GridMismatch(CalmError):
    """Utility curves do not share one common distance grid."""


class EmptyGroup(CalmError):
    """A percentile group selects no classes."""


class NoValidTriplets(CalmError):
    """No (anchor, positive, negative) triplet can be formed."""


class ShapeMismatch(CalmError):
    """Gradients to be combined have different shapes."""


class Degenerate(CalmError):
    """Mean resultant length too close to 1 for concentration estimation."""


class InvalidBounds(CalmError):
    """Normalization bounds are not strictly ordered."""


class InsufficientSamples(CalmError):
    """No class accumulated enough samples for a concentration refresh."""


class EmptyInput(CalmError):
    """An operation received an empty collection."""


class NonFiniteLoss(CalmError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


class FormatError(CalmError):
    """An embedding file is malformed or fails its norm check."""


class ConfigError(CalmError):
    """A run configuration document is invalid."""
