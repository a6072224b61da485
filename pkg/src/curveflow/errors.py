"""Exception hierarchy shared by every module."""


class CurveFlowError(Exception):
    """Base class for all curveflow errors."""


class InvalidCurve(CurveFlowError, ValueError):
    """Node array cannot form a valid closed polygon."""


class ZeroSegment(CurveFlowError):
    """A polygon edge has (numerically) zero length."""


class CurvatureSignViolation(CurveFlowError):
    """Nodal curvature breaks the positivity assumption required by alpha."""


class SingularNodalNormal(CurveFlowError):
    """Adjacent edge normals cancel at a node, so curvature is undefined there."""


class SingularSystem(CurveFlowError):
    """Linear system of a Newton/Picard step is numerically singular."""


class MaxIterExceeded(CurveFlowError):
    """Nonlinear iteration failed to meet the stopping rule."""


class InvalidSpec(CurveFlowError, ValueError):
    """Shape specification is malformed."""


class SelfIntersecting(CurveFlowError):
    """Polygon is not simple."""


class CheckpointMisaligned(CurveFlowError):
    """A measurement time is not an integer multiple of a time step."""


class ConfigError(CurveFlowError, ValueError):
    """Invalid run configuration."""
