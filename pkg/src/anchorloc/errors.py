"""Domain error types.

Every error raised by the library derives from :class:`AnchorlocError`, so
callers (and the CLI, which maps them to exit code 1) can catch one base
class.  The class name is the error name reported to users.
"""


class AnchorlocError(Exception):
    """Base class for all domain errors."""


class DimensionMismatch(AnchorlocError):
    """Array shapes or dimensions are incompatible with the operation."""


class RankDeficient(AnchorlocError):
    """Embedding rows are numerically linearly dependent."""


class ZeroVector(AnchorlocError):
    """A vector with (near-)zero norm cannot be normalized."""


class DegenerateMap(AnchorlocError):
    """An activation map with no value spread cannot be thresholded."""


class InsufficientBackground(AnchorlocError):
    """Background candidate pool too small after exclusions."""


class ShapeMismatch(AnchorlocError):
    """Model input shape does not match the configured architecture."""


class AdapterUnavailable(AnchorlocError):
    """The configured encoder backbone is not available."""


class MissingCam(AnchorlocError):
    """A training image has no activation map to sample pseudo-labels from."""


class InvalidManifest(AnchorlocError):
    """Dataset manifest is empty, unreadable, or inconsistent."""


class NonFiniteLoss(AnchorlocError):
    """Training produced a non-finite loss; the run is aborted."""


class InfeasibleConfig(AnchorlocError):
    """A configuration cannot be satisfied (e.g. block larger than grid)."""


class EmptyDataset(AnchorlocError):
    """An evaluation was requested over zero images."""


class FormatError(AnchorlocError):
    """A binary artifact file is malformed or has the wrong magic/version."""
