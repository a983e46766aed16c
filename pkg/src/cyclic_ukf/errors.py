"""Exception hierarchy for cyclic_ukf.

Every error raised on purpose by the library derives from
:class:`CyclicUKFError`, and additionally from the closest builtin
(``ValueError`` or ``numpy.linalg.LinAlgError``) so callers that only
know the builtins still catch them.
"""

import numpy as np


class CyclicUKFError(Exception):
    """Base class for all library errors."""


# contour geometry
class EmptyMask(CyclicUKFError, ValueError):
    pass


class DegenerateRegion(CyclicUKFError, ValueError):
    pass


class ZeroRadius(CyclicUKFError, ValueError):
    pass


class NotStarShaped(CyclicUKFError, ValueError):
    pass


class OutOfBounds(CyclicUKFError, ValueError):
    pass


class PGMFormatError(CyclicUKFError, ValueError):
    pass


# dynamics
class NonPositiveRate(CyclicUKFError, ValueError):
    pass


class BadFrameCount(CyclicUKFError, ValueError):
    pass


# filter
class DegenerateScaling(CyclicUKFError, ValueError):
    pass


class NotPositiveDefinite(CyclicUKFError, np.linalg.LinAlgError):
    pass


class SingularInnovation(CyclicUKFError, np.linalg.LinAlgError):
    pass


class TooFewFrames(CyclicUKFError, ValueError):
    pass


class PointFilterError(CyclicUKFError):
    """A per-point filter failed; ``point`` is the contour index."""

    def __init__(self, point, cause):
        super().__init__(f"contour point {point}: {cause}")
        self.point = point
        self.cause = cause


# metrics
class DimensionMismatch(CyclicUKFError, ValueError):
    pass


class BothEmpty(CyclicUKFError, ValueError):
    pass


class EmptyContour(CyclicUKFError, ValueError):
    pass


class EmptyList(CyclicUKFError, ValueError):
    pass


# harness / pipeline
class BadConfig(CyclicUKFError, ValueError):
    pass


class ShapeMismatch(CyclicUKFError, ValueError):
    pass


class InputError(CyclicUKFError):
    """Malformed pipeline input; message carries frame/file context."""
