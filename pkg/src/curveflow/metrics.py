"""Error and quality diagnostics: manifold distance, area loss, perimeter, mesh ratio."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .curve import PolygonalCurve, area, mesh_ratio, perimeter
from .errors import SelfIntersecting

log = logging.getLogger(__name__)

PARAM_TOL = 1e-12


def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _edges(nodes: np.ndarray):
    return nodes, np.roll(nodes, -1, axis=0)


def is_simple(curve: PolygonalCurve) -> bool:
    """True if no two non-adjacent edges touch and adjacent edges only share their vertex."""
    p0, p1 = _edges(curve.nodes)
    n = len(p0)
    r = p1 - p0
    qp = p0[None, :, :] - p0[:, None, :]  # [i, j] = p0_j - p0_i
    denom = _cross(r[:, None, :], r[None, :, :])
    scale = np.abs(r).max() or 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(qp, r[None, :, :]) / denom
        u = _cross(qp, r[:, None, :]) / denom
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    adjacent = (j == (i + 1) % n) | (i == (j + 1) % n) | (i == j)
    hit = (np.abs(denom) > 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1) & ~adjacent
    if hit.any():
        return False
    # collinear overlaps, including adjacent edges folding back onto each other
    par = np.abs(denom) <= 1e-14 * scale * scale
    col = par & (np.abs(_cross(qp, r[:, None, :])) <= 1e-14 * scale * scale) & (i != j)
    if col.any():
        rr = np.einsum("ij,ij->i", r, r)
        for a, b in zip(*np.nonzero(col)):
            t0 = np.dot(p0[b] - p0[a], r[a]) / rr[a]
            t1 = np.dot(p1[b] - p0[a], r[a]) / rr[a]
            lo, hi = min(t0, t1), max(t0, t1)
            overlap = min(hi, 1.0) - max(lo, 0.0)
            if overlap > 1e-12:
                return False
            if not adjacent[a, b] and overlap >= 0:
                return False
    return True


def _split_params(a_nodes: np.ndarray, b_nodes: np.ndarray, tol: float) -> list[np.ndarray]:
    """For each edge of A, the interior parameters where it meets the boundary of B."""
    a0, a1 = _edges(a_nodes)
    b0, b1 = _edges(b_nodes)
    r = a1 - a0
    s = b1 - b0
    qp = b0[None, :, :] - a0[:, None, :]
    denom = _cross(r[:, None, :], s[None, :, :])
    rn = np.hypot(r[:, 0], r[:, 1])[:, None]
    sn = np.hypot(s[:, 0], s[:, 1])[None, :]
    nonpar = np.abs(denom) > 1e-14 * rn * sn
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(nonpar, _cross(qp, s[None, :, :]) / denom, np.nan)
        u = np.where(nonpar, _cross(qp, r[:, None, :]) / denom, np.nan)
    hit = nonpar & (t > tol) & (t < 1 - tol) & (u >= -tol) & (u <= 1 + tol)
    out: list[list[float]] = [[] for _ in range(len(a0))]
    for i, j in zip(*np.nonzero(hit)):
        out[i].append(t[i, j])
    # B vertices lying on A edges (covers collinear overlaps and T-contacts)
    rr = (rn[:, 0]) ** 2
    d = b_nodes[None, :, :] - a0[:, None, :]
    tv = np.einsum("ijk,ik->ij", d, r) / rr[:, None]
    dist = np.abs(_cross(d, r[:, None, :])) / rn
    scale = max(np.ptp(a_nodes, axis=0).max(), np.ptp(b_nodes, axis=0).max(), 1e-300)
    on = (tv > tol) & (tv < 1 - tol) & (dist <= tol * scale)
    for i, j in zip(*np.nonzero(on)):
        out[i].append(tv[i, j])
    return [np.unique(np.asarray(v)) if v else np.empty(0) for v in out]


def _points_in_polygon(pts: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Even-odd rule, vectorized over points."""
    x0, y0 = nodes[:, 0], nodes[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    px = pts[:, 0:1]
    py = pts[:, 1:2]
    cond = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    return np.count_nonzero(cond & (px < xint), axis=1) % 2 == 1


def _on_boundary(pts: np.ndarray, nodes: np.ndarray, tol: float):
    """Index of a boundary edge of ``nodes`` through each point, or -1."""
    e0, e1 = _edges(nodes)
    r = e1 - e0
    rr = np.einsum("ij,ij->i", r, r)
    d = pts[:, None, :] - e0[None, :, :]
    t = np.clip(np.einsum("pij,ij->pi", d, r) / rr, 0.0, 1.0)
    closest = e0[None] + t[..., None] * r[None]
    dist = np.hypot(*(pts[:, None, :] - closest).transpose(2, 0, 1))
    idx = dist.argmin(axis=1)
    return np.where(dist[np.arange(len(pts)), idx] <= tol, idx, -1)


def _clipped_contribution(a_nodes, b_nodes, tol, keep_same_direction: bool) -> float:
    """Green's-theorem area of the part of A's boundary inside B."""
    params = _split_params(a_nodes, b_nodes, tol)
    a0, a1 = _edges(a_nodes)
    starts, ends = [], []
    for i, ts in enumerate(params):
        knots = np.concatenate(([0.0], ts, [1.0]))
        pts = a0[i] + knots[:, None] * (a1[i] - a0[i])
        starts.append(pts[:-1])
        ends.append(pts[1:])
    p = np.concatenate(starts)
    q = np.concatenate(ends)
    mid = 0.5 * (p + q)
    scale = max(np.ptp(a_nodes, axis=0).max(), np.ptp(b_nodes, axis=0).max())
    edge_on = _on_boundary(mid, b_nodes, 1e-10 * scale)
    inside = _points_in_polygon(mid, b_nodes)
    keep = inside & (edge_on < 0)
    shared = edge_on >= 0
    if shared.any() and keep_same_direction:
        b0, b1 = _edges(b_nodes)
        dirs = (b1 - b0)[edge_on[shared]]
        same = np.einsum("ij,ij->i", q[shared] - p[shared], dirs) > 0
        keep[np.flatnonzero(shared)[same]] = True
    p, q = p[keep], q[keep]
    return 0.5 * float(np.sum((q[:, 0] - p[:, 0]) * (q[:, 1] + p[:, 1])))


def intersection_area(c1: PolygonalCurve, c2: PolygonalCurve, tol: float = PARAM_TOL) -> float:
    """Area of the intersection of the regions enclosed by two clockwise simple polygons.

    The boundary of the intersection consists of the pieces of each boundary
    lying inside the other region; summing their shoelace terms gives the
    area.  Boundary pieces shared by both polygons are counted once when the
    edges run in the same direction and dropped when they run opposite.
    """
    a = c1.oriented().nodes
    b = c2.oriented().nodes
    return _clipped_contribution(a, b, tol, True) + _clipped_contribution(b, a, tol, False)


class DistanceResult(NamedTuple):
    value: float
    exact: bool  # False when the rasterized estimate was used


def raster_symmetric_difference(c1: PolygonalCurve, c2: PolygonalCurve, resolution: int = 4096) -> float:
    """Symmetric-difference area by even-odd sampling at cell centres of a grid.

    The grid covers the joint bounding box with ``resolution`` cells per side.
    """
    nodes = np.concatenate([c1.nodes, c2.nodes])
    lo = nodes.min(axis=0)
    hi = nodes.max(axis=0)
    span = hi - lo
    cell = span / resolution
    xs = lo[0] + (np.arange(resolution) + 0.5) * cell[0]
    ys = lo[1] + (np.arange(resolution) + 0.5) * cell[1]
    m1 = _raster_mask(c1.nodes, xs, ys)
    m2 = _raster_mask(c2.nodes, xs, ys)
    return float(np.count_nonzero(m1 ^ m2)) * cell[0] * cell[1]


def raster_error_bound(c1: PolygonalCurve, c2: PolygonalCurve, resolution: int = 4096) -> float:
    """Worst-case error of :func:`raster_symmetric_difference`.

    Only cells cut by a boundary can be misclassified.  An edge of length
    ``l`` meets at most ``l * sqrt(2) / cell + 2`` cells of a square grid,
    counted here with the larger cell side.
    """
    nodes = np.concatenate([c1.nodes, c2.nodes])
    cell = (nodes.max(axis=0) - nodes.min(axis=0)) / resolution
    side = float(cell.max())
    cells = math.sqrt(2.0) * (perimeter(c1) + perimeter(c2)) / side + 2 * (c1.n + c2.n)
    return cells * float(cell[0] * cell[1])


def _raster_mask(nodes: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    x0, y0 = nodes[:, 0], nodes[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    nx = len(xs)
    py = ys[:, None]
    cond = (y0 > py) != (y1 > py)
    rows, edges = np.nonzero(cond)
    xint = x0[edges] + (ys[rows] - y0[edges]) * (x1[edges] - x0[edges]) / (y1[edges] - y0[edges])
    # a crossing at xint flips parity for every sample with x > xint
    col = np.searchsorted(xs, xint, side="right")
    flips = np.zeros((len(ys), nx + 1), dtype=np.int32)
    np.add.at(flips, (rows, col), 1)
    return (np.cumsum(flips[:, :nx], axis=1) % 2).astype(bool)


def symmetric_difference(c1: PolygonalCurve, c2: PolygonalCurve, check_simple: bool = True) -> DistanceResult:
    """Manifold distance with a flag telling whether the exact path was used."""
    for c in (c1, c2):
        if check_simple and not is_simple(c):
            raise SelfIntersecting("manifold distance needs simple polygons")
    a1 = abs(area(c1))
    a2 = abs(area(c2))
    inter = intersection_area(c1, c2)
    slack = 1e-9 * max(a1, a2)
    if -slack <= inter <= min(a1, a2) + slack and math.isfinite(inter):
        return DistanceResult(max(a1 + a2 - 2.0 * min(max(inter, 0.0), min(a1, a2)), 0.0), True)
    log.warning("boolean intersection inconsistent (%.3e); using rasterized estimate", inter)
    return DistanceResult(raster_symmetric_difference(c1, c2), False)


def manifold_distance(c1: PolygonalCurve, c2: PolygonalCurve, check_simple: bool = True) -> float:
    """Area of the symmetric difference of the two enclosed regions."""
    return symmetric_difference(c1, c2, check_simple).value


@dataclass(frozen=True)
class State:
    """One stored point of a run."""

    t: float
    curve: PolygonalCurve
    kappa: np.ndarray
    lambda_: float = float("nan")
    iterations: int = 0


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    area: float
    rel_area_loss: float
    perimeter: float
    norm_perimeter: float
    mesh_ratio: float
    lambda_: float
    iterations: int

    FIELDS = ("t", "area", "rel_area_loss", "perimeter", "norm_perimeter", "mesh_ratio", "lambda", "iterations")

    def values(self) -> tuple:
        return (self.t, self.area, self.rel_area_loss, self.perimeter, self.norm_perimeter,
                self.mesh_ratio, self.lambda_, self.iterations)


def diagnostics_row(state: State, area0: float, perimeter0: float) -> DiagnosticsRow:
    a = area(state.curve)
    p = perimeter(state.curve)
    return DiagnosticsRow(
        t=state.t,
        area=a,
        rel_area_loss=(a - area0) / area0,
        perimeter=p,
        norm_perimeter=p / perimeter0,
        mesh_ratio=mesh_ratio(state.curve),
        lambda_=state.lambda_,
        iterations=state.iterations,
    )


def diagnostics(history: Iterable[State]) -> list[DiagnosticsRow]:
    """One row per state, area loss and perimeter referenced to the first state."""
    history = list(history)
    if not history:
        raise ValueError("empty history")
    a0 = area(history[0].curve)
    p0 = perimeter(history[0].curve)
    return [diagnostics_row(s, a0, p0) for s in history]
