"""Exception types raised across the package."""


class SRHeatError(Exception):
    """Base class for all errors raised by srheat."""


class DimensionMismatch(SRHeatError, ValueError):
    pass


class HormanderViolation(SRHeatError):
    """Brackets up to ``max_depth`` do not span the tangent space at the point.

    This is a report, not a proof: a larger depth may succeed.
    """

    def __init__(self, max_depth, growth_vector, dim):
        self.max_depth = max_depth
        self.growth_vector = list(growth_vector)
        self.dim = dim
        super().__init__(
            f"brackets of depth <= {max_depth} span only "
            f"{self.growth_vector[-1] if self.growth_vector else 0} of {dim} "
            f"directions (growth so far {self.growth_vector})"
        )


class FrameNotAdapted(SRHeatError):
    pass


class Inconclusive(SRHeatError):
    pass


class TruncationLoss(UserWarning):
    """Requested jet degree exceeds what the chart truncation supports."""


class EmptyLowestPart(SRHeatError):
    pass


class NonpositiveDensity(SRHeatError, ValueError):
    pass


class StencilOverflow(SRHeatError, ValueError):
    pass


class StabilityError(SRHeatError):
    def __init__(self, message, required_dt=None):
        self.required_dt = required_dt
        super().__init__(message)


class GridError(SRHeatError, ValueError):
    pass


class IllConditioned(SRHeatError):
    pass


class ChartValidityError(SRHeatError, ValueError):
    pass


class ModelError(SRHeatError, ValueError):
    pass
