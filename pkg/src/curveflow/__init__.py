"""Structure-preserving parametric FEM for area-conserved generalized curvature flow of closed polygons."""
from .curve import PolygonalCurve, area, frames, mesh_ratio, perimeter, segment_lengths, segment_vectors
from .errors import (
    CheckpointMisaligned,
    ConfigError,
    CurvatureSignViolation,
    CurveFlowError,
    InvalidCurve,
    InvalidSpec,
    MaxIterExceeded,
    SelfIntersecting,
    SingularNodalNormal,
    SingularSystem,
    ZeroSegment,
)
from .harness import ExperimentPlan, convergence_study, evolve, structure_sweep
from .metrics import State, diagnostics, manifold_distance
from .scheme import FlowParams, lambda_discrete, mass_lumped_inner, project_curvature, residual
from .shapes import ShapeSpec, generate, regular_polygon
from .solver import SolverConfig, advance, assemble_newton, assemble_picard, solve_system

__version__ = "0.1.0"
