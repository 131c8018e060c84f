"""Exception hierarchy for the sgam package."""


class SgamError(Exception):
    """Base class for all package-specific errors."""


class GeometryError(SgamError):
    pass


class InsufficientMatchesError(GeometryError):
    """Fewer correspondences than the estimator requires."""


class DegenerateGeometryError(GeometryError):
    """Point configuration cannot constrain the model (e.g. collinear points)."""


class EpipoleError(GeometryError):
    """Sampson denominator vanished: the point sits on an epipole."""


class NoConsensusError(GeometryError):
    """RANSAC failed to find a consensus set of at least minimal size."""


class CheiralityError(GeometryError):
    """No pose candidate places a strict majority of points in front of both cameras."""


class MapError(SgamError):
    """Semantic map is malformed or inconsistent with its paired image."""


class WindowError(SgamError):
    """Query window does not intersect the semantic map."""


class MatcherError(SgamError):
    """A point matcher failed to produce a response."""


class ProtocolError(MatcherError):
    """External matcher violated the wire protocol."""


class MatcherTimeoutError(MatcherError):
    """External matcher did not reply within the deadline."""


class CovisibilityError(MatcherError):
    """Too few co-visible pixels between the requested crops."""


class ConsistencyError(SgamError):
    """Geometry-consistency computation has no usable area matches."""


class AssignmentError(SgamError):
    """Every candidate assignment of doubtful areas is invalid."""


class NoOverlapError(SgamError):
    """Rendered camera pair shares too little co-visible area."""


class EvalError(SgamError):
    """Metric cannot be computed from the given inputs."""
