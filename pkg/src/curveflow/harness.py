"""Experiment drivers: single evolutions, convergence studies and structure sweeps."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .curve import PolygonalCurve, area, perimeter, segment_lengths
from .errors import CheckpointMisaligned, CurveFlowError, ZeroSegment
from .metrics import DiagnosticsRow, State, diagnostics_row, manifold_distance
from .scheme import FlowParams, project_curvature
from .shapes import ShapeSpec, generate, regular_polygon
from .solver import SolverConfig, advance

log = logging.getLogger(__name__)

# (alpha, beta, final time) for the six ellipse regimes; final times are capped at t = 2.
ELLIPSE_REGIMES: tuple[tuple[Fraction, int, float], ...] = (
    (Fraction(1), -1, 2.0),
    (Fraction(2), -1, 2.0),
    (Fraction(1, 3), -1, 2.0),
    (Fraction(-1), 1, 0.5),
    (Fraction(-2), 1, 0.2),
    (Fraction(-1, 3), 1, 2.0),
)

DEFAULT_CHECKPOINTS = (0.25, 0.5, 1.0, 2.0)
REFERENCE = (2.0**-8, 2.0**-16)
QUICK_REFERENCE = (2.0**-7, 2.0**-14)


def n_from_h(h: float) -> int:
    n = int(round(1.0 / h))
    if n < 3 or abs(n * h - 1.0) > 1e-12:
        raise ValueError(f"mesh size h={h} must be 1/N with integer N >= 3")
    return n


def steps_for(t: float, tau: float) -> int:
    """Number of steps reaching exactly ``t``; raises if ``t`` is off the time grid."""
    m = round(t / tau)
    if abs(m * tau - t) > 1e-12 * max(abs(t), tau):
        raise CheckpointMisaligned(f"t={t} is not a multiple of tau={tau}")
    return int(m)


@dataclass
class EvolveResult:
    snapshots: list[State]
    rows: list[DiagnosticsRow]
    final: State
    error: CurveFlowError | None = None

    def snapshot_at(self, t: float) -> State:
        for s in self.snapshots:
            if abs(s.t - t) <= 1e-12 * max(1.0, abs(t)):
                return s
        raise KeyError(f"no snapshot stored at t={t}")


def evolve(
    curve0: PolygonalCurve,
    params: FlowParams,
    t_max: float,
    config: SolverConfig = SolverConfig(),
    checkpoints: Sequence[float] = (),
    snapshot_every: int | None = None,
    kappa0: np.ndarray | None = None,
    raise_errors: bool = True,
) -> EvolveResult:
    """Step from ``t = 0`` to ``t_max``.

    Diagnostics are recorded every step; full curve states at ``t = 0``, every
    checkpoint, every ``snapshot_every`` steps and at the end.  On a solver
    error the partial result is attached to the exception as ``.partial``
    (or returned with ``.error`` set when ``raise_errors`` is false).
    """
    curve0 = curve0.oriented().validated()
    n_steps = steps_for(t_max, params.tau)
    marks = {steps_for(t, params.tau) for t in checkpoints if t <= t_max + 1e-12}
    kappa = project_curvature(curve0) if kappa0 is None else np.asarray(kappa0, dtype=float)
    a0, p0 = area(curve0), perimeter(curve0)
    min_edge = 1e-12 * p0 / curve0.n

    state = State(0.0, curve0, kappa)
    snaps = [state]
    rows = [diagnostics_row(state, a0, p0)]
    curve = curve0
    for m in range(1, n_steps + 1):
        t = m * params.tau
        try:
            curve, kappa, rep = advance(curve, kappa, params, config)
            if segment_lengths(curve).min() <= min_edge:
                raise ZeroSegment(f"edge length fell below {min_edge:.3e}")
        except CurveFlowError as exc:
            exc.args = (f"step {m} (t={t:.6g}): {exc}",)
            exc.step, exc.t = m, t
            result = EvolveResult(snaps, rows, snaps[-1] if snaps[-1].t == rows[-1].t else state, exc)
            exc.partial = result
            log.error("evolution aborted at step %d: %s", m, exc)
            if raise_errors:
                raise
            return result
        state = State(t, curve, kappa, rep.lambda_, rep.iterations)
        rows.append(diagnostics_row(state, a0, p0))
        if m in marks or m == n_steps or (snapshot_every and m % snapshot_every == 0):
            snaps.append(state)
    return EvolveResult(snaps, rows, state)


def equal_area_circle(curve: PolygonalCurve, n: int, radius: float | None = None) -> PolygonalCurve:
    """Regular ``n``-gon centred at the curve centroid (default radius sqrt(A/pi))."""
    r = math.sqrt(area(curve) / math.pi) if radius is None else radius
    return regular_polygon(n, r, curve.centroid())


@dataclass(frozen=True)
class ExperimentPlan:
    shape: ShapeSpec
    alpha: float
    beta: float
    h_levels: tuple[float, ...] = (2.0**-3, 2.0**-4, 2.0**-5, 2.0**-6)
    tau_factor: float = 1.0  # tau = tau_factor * h^2
    taus: tuple[float, ...] | None = None  # explicit per-level steps
    checkpoints: tuple[float, ...] = DEFAULT_CHECKPOINTS
    h_ref: float = REFERENCE[0]
    tau_ref: float = REFERENCE[1]
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        FlowParams(self.alpha, self.beta, 1.0)
        if self.taus is not None and len(self.taus) != len(self.h_levels):
            raise ValueError("taus must match h_levels")
        for h in self.h_levels:
            if not self.h_ref <= h:
                raise ValueError(f"reference h={self.h_ref} must not be coarser than level h={h}")
        for tau in self.level_taus() + (self.tau_ref,):
            for t in self.checkpoints:
                steps_for(t, tau)

    def level_taus(self) -> tuple[float, ...]:
        if self.taus is not None:
            return tuple(self.taus)
        return tuple(self.tau_factor * h * h for h in self.h_levels)

    @property
    def t_max(self) -> float:
        return max(self.checkpoints)

    def params(self, tau: float) -> FlowParams:
        return FlowParams(self.alpha, self.beta, tau)


@dataclass(frozen=True)
class ConvergenceRow:
    h: float
    t: float
    error: float
    order: float | None


def _checkpoint_run(args) -> dict[float, np.ndarray]:
    shape, params, config, checkpoints = args
    curve0 = generate(shape)
    res = evolve(curve0, params, max(checkpoints), config, checkpoints=checkpoints)
    return {t: res.snapshot_at(t).curve.nodes for t in checkpoints}


def _pool_map(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def convergence_study(plan: ExperimentPlan, jobs: int = 1) -> list[ConvergenceRow]:
    """Spatial errors ``M(coarse, reference)`` at each checkpoint and observed orders.

    The reference run is computed once and shared by all levels; with
    ``jobs > 1`` it runs concurrently with the coarse levels.
    """
    cps = tuple(plan.checkpoints)
    tasks = [(replace(plan.shape, n_nodes=n_from_h(plan.h_ref)), plan.params(plan.tau_ref), plan.solver, cps)]
    for h, tau in zip(plan.h_levels, plan.level_taus()):
        tasks.append((replace(plan.shape, n_nodes=n_from_h(h)), plan.params(tau), plan.solver, cps))
    results = _pool_map(_checkpoint_run, tasks, jobs)
    ref = results[0]
    rows: list[ConvergenceRow] = []
    for t in cps:
        ref_curve = PolygonalCurve(ref[t])
        prev = None
        for h, snaps in zip(plan.h_levels, results[1:]):
            err = manifold_distance(PolygonalCurve(snaps[t]), ref_curve)
            order = None
            if prev is not None and prev[1] > 0 and err > 0:
                order = math.log(prev[1] / err) / math.log(prev[0] / h)
            rows.append(ConvergenceRow(h, t, err, order))
            prev = (h, err)
    return rows


@dataclass(frozen=True)
class RegimeReport:
    alpha: float
    beta: float
    h: float
    tau: float
    t_final: float
    steps: int
    max_rel_area_loss: float
    perimeter_violations: int
    initial_mesh_ratio: float
    final_mesh_ratio: float
    max_iterations: int
    frac_steps_le3: float
    error: str | None = None

    @property
    def passed(self) -> bool:
        return self.error is None and self.max_rel_area_loss <= 1e-11 and self.perimeter_violations == 0

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["passed"] = self.passed
        return d


def regime_report(rows: Sequence[DiagnosticsRow], alpha, beta, h, tau, t_final, error=None) -> RegimeReport:
    loss = max(abs(r.rel_area_loss) for r in rows)
    per = [r.perimeter for r in rows]
    violations = sum(1 for p_old, p_new in zip(per, per[1:]) if p_new > p_old * (1.0 + 1e-12))
    its = [r.iterations for r in rows[1:]]
    return RegimeReport(
        alpha=float(alpha), beta=float(beta), h=h, tau=tau, t_final=t_final, steps=len(its),
        max_rel_area_loss=loss, perimeter_violations=violations,
        initial_mesh_ratio=rows[0].mesh_ratio, final_mesh_ratio=rows[-1].mesh_ratio,
        max_iterations=max(its, default=0),
        frac_steps_le3=(sum(i <= 3 for i in its) / len(its)) if its else 1.0,
        error=error,
    )


def _sweep_member(args) -> RegimeReport:
    shape, alpha, beta, h, tau, t_final, config = args
    params = FlowParams(float(alpha), float(beta), tau)
    res = evolve(generate(shape), params, t_final, config, raise_errors=False)
    return regime_report(res.rows, alpha, beta, h, tau, t_final, None if res.error is None else str(res.error))


def structure_sweep(
    regimes: Sequence[tuple[float, float, float]],
    h: float,
    taus: Sequence[float],
    shape: ShapeSpec | None = None,
    config: SolverConfig = SolverConfig(),
    jobs: int = 1,
) -> list[RegimeReport]:
    """Run every ``(alpha, beta, t_final)`` regime for every time step in ``taus``."""
    shape = replace(shape or ShapeSpec("ellipse", 3), n_nodes=n_from_h(h))
    tasks = []
    for alpha, beta, t_final in regimes:
        FlowParams(float(alpha), float(beta), 1.0)
        for tau in taus:
            # final time rounded down onto the time grid
            t_end = math.floor(t_final / tau + 1e-9) * tau
            tasks.append((shape, alpha, beta, h, tau, t_end, config))
    return _pool_map(_sweep_member, tasks, jobs)


def default_jobs() -> int:
    return max(1, min(8, os.cpu_count() or 1))
