"""Exception hierarchy used throughout the package."""


class SBSError(Exception):
    """Base class for every error raised by sbscycles."""


class ConfigurationError(SBSError):
    """Incompatible model/section data or malformed job configuration."""


class ChartError(SBSError):
    """A point cannot be expressed in the requested chart."""


class GeometryError(SBSError):
    """Malformed geometric input (for example a polyline that is not closed)."""


class DivisorError(SBSError):
    """Evaluation too close to the zero divisor of the section."""

    def __init__(self, message, norm_sq=None):
        super().__init__(message)
        self.norm_sq = norm_sq


class StabilityError(DivisorError):
    """A curve or trajectory entered the divisor tube."""


class PreconditionError(SBSError):
    """An operation was called outside of its domain."""


class IntegrationError(SBSError):
    """Flow integration failed (step collapse or loss of monotonicity)."""


class ReconstructionError(SBSError):
    """Base-sphere reconstruction failed for some launch direction."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class UnsupportedModelError(SBSError):
    """Operation not available for the given model kind."""


class InvariantViolation(SBSError):
    """A mathematical invariant that must always hold was violated."""
