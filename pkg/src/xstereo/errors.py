"""Shared exception types for the xstereo toolkit."""


class XStereoError(Exception):
    """Base class for all toolkit-specific errors."""


class InvalidConfig(XStereoError):
    """A configuration value or file is malformed or out of range."""


class ShapeMismatch(XStereoError):
    """Array arguments disagree on shape or channel count."""


class NonPositiveDepth(XStereoError):
    """A projection was requested for a point at or behind the camera plane."""


class OddDimensions(XStereoError):
    """An operation requiring even raster dimensions received odd ones."""


class DegenerateSystem(XStereoError):
    """A least-squares system has no unique solution (rank deficient)."""


class InsufficientValidPixels(XStereoError):
    """Too few valid pixels remain to run the requested estimation."""


class Diverged(XStereoError):
    """An iterative optimizer failed to reduce its cost."""


class EmptyMask(XStereoError):
    """A masked reduction received a mask with no valid entries."""


class EmptyBucket(XStereoError):
    """A range bucket contains no ground-truth pixels."""


class IoError(XStereoError):
    """A dataset file is missing, unreadable, or failed to write."""
