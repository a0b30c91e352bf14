"""Exception types shared across the package.

Data-dependent failures raise subclasses of :class:`ViewstyleError` so the
CLI can map them onto a single exit code.
"""


class ViewstyleError(Exception):
    """Base class for all data-dependent errors raised by this package."""


class NonPositiveDepthError(ViewstyleError):
    """A depth (or depth ratio denominator) was zero or negative."""


class BadIndexOrderError(ViewstyleError):
    """Target frame index must be strictly greater than the reference index."""


class EmptyMaskError(ViewstyleError):
    """An operation requiring a non-empty mask received an all-false mask."""


class EmptyValidityError(ViewstyleError):
    """A warp produced no valid pixels where some were required."""


class DimensionMismatchError(ViewstyleError):
    """Array shapes passed to a kernel are inconsistent."""


class ShapeMismatchError(ViewstyleError):
    """Latent / proposal shapes disagree."""


class WeightOutOfRangeError(ViewstyleError):
    """A blend weight fell outside [0, 1]."""


class GridTooCoarseError(ViewstyleError):
    """The timestep grid has too few points for the requested inversion."""


class MagicMismatchError(ViewstyleError):
    """A raster file does not start with the expected magic bytes."""


class TruncatedFileError(ViewstyleError):
    """A raster file ended before its declared payload was complete."""


class DimensionOverflowError(ViewstyleError):
    """A raster file declares dimensions above the supported maximum."""
