"""Exception types shared across the toolkit."""


class OrthovarError(Exception):
    """Base class for all toolkit errors."""


class PointOutsideTube(OrthovarError):
    """Point lies outside the tubular neighborhood where the boundary
    geometry (projection, reflection, frames) is well defined."""


class NoConvergence(OrthovarError):
    """An iterative solver exceeded its iteration budget."""


class OffsetTooLarge(OrthovarError):
    """Fermi-coordinate offset exceeds the configured fraction of the reach."""


class DegenerateStencil(OrthovarError):
    """Curvature fitting stencil is rank deficient."""


class NonManifoldVertex(OrthovarError):
    """Mesh has an edge shared by more than two triangles."""


class BoundaryOffSurface(OrthovarError):
    """Boundary vertices do not lie on the domain boundary within tolerance."""


class BoundaryNotOnSurface(BoundaryOffSurface):
    """Alias used by the reflection module."""


class EmptyIntersection(OrthovarError):
    """Plane does not intersect the open domain at this resolution."""


class ContinuationDiverged(OrthovarError):
    """Newton continuation of a slice failed to converge."""


class PerturbationTooLarge(OrthovarError):
    """Perturbation exceeds the configured smallness threshold."""


class LineSearchFailed(OrthovarError):
    """Armijo backtracking exhausted its halving budget."""


class MeshDegenerated(OrthovarError):
    """Minimum triangle quality dropped below the configured floor."""


class Collapsed(OrthovarError):
    """Surface area dropped below the collapse-detection floor."""


class MetricNotInvertible(OrthovarError):
    """Metric matrix is singular at an evaluation point."""


class QuadratureUnderresolved(OrthovarError):
    """Mollifier quadrature grid too coarse for the sampled field."""


class ChartCoverageGap(OrthovarError):
    """Partition of unity does not cover the curve."""


class GenericityFailed(OrthovarError):
    """All perturbation retries left at least one orthogonal slice."""


class LambdaOutOfRange(OrthovarError):
    """Comparison-surface parameter outside the configured range."""


class UnknownFixture(OrthovarError):
    """Fixture name not recognized."""


class ConfigError(OrthovarError):
    """Invalid or unknown configuration key/value."""
