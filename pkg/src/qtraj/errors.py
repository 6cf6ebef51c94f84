"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Operator/state dimensions are incompatible."""


class NormalizationError(ValueError):
    """A state that must be normalized is not."""


class PropagatorError(RuntimeError):
    """The short-time propagator failed to reach the requested tolerance.

    Carries the achieved error estimate in ``achieved``.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class RootFindingError(RuntimeError):
    """Jump-time root refinement stagnated; ``achieved`` holds the residual."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class TrajectoryAbort(RuntimeError):
    """A trajectory hit an inconsistent state (e.g. zero-weight jump)."""


class SectorError(ValueError):
    """Particle-number sectors are inconsistent or infeasible."""


class OracleSizeError(ValueError):
    """Requested dense computation exceeds the oracle scale."""


class OracleInvariantError(RuntimeError):
    """Density-matrix invariant violated during integration (dt too large)."""


class ConfigError(ValueError):
    """Run configuration failed schema validation."""


class CoarseStepWarning(UserWarning):
    """Total jump probability per step exceeded the first-order safety bound."""


class ZenoRegimeWarning(UserWarning):
    """Rate ratio too small for the perturbative loss-rate formula."""


class VarianceClampWarning(UserWarning):
    """Negative sample variance clamped to zero (catastrophic cancellation)."""
