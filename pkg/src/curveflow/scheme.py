"""Weak-form pieces of the fully discrete area-conserving scheme.

All inner products are mass-lumped over the *old* curve.  For a node
``k``, with edge lengths ``a`` of the old curve, the nodal hat function
``phi_k`` sees the weight ``w_k = (a[k-1] + a[k]) / 2`` and, for edge-wise
constant vectors ``c``, the lumped value ``(a[k-1] c[k-1] + a[k] c[k]) / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .curve import PolygonalCurve, _checked_lengths, frames, perp, segment_vectors
from .errors import ConfigError, CurvatureSignViolation, SingularNodalNormal


@dataclass(frozen=True)
class FlowParams:
    """Flow exponent ``alpha``, coefficient ``beta`` and time step ``tau``.

    ``curvature_sign_mode`` is ``"assumption"`` (enforce the positivity
    assumption that goes with ``alpha``) or ``"off"``.
    """

    alpha: float
    beta: float
    tau: float
    curvature_sign_mode: str = "assumption"

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and np.isfinite(self.beta)):
            raise ConfigError("alpha and beta must be finite")
        if not self.alpha * self.beta < 0:
            raise ConfigError(f"alpha*beta must be negative, got alpha={self.alpha}, beta={self.beta}")
        if not (self.tau > 0 and np.isfinite(self.tau)):
            raise ConfigError(f"time step must be positive, got {self.tau}")
        if self.curvature_sign_mode not in ("assumption", "off"):
            raise ConfigError(f"unknown curvature_sign_mode {self.curvature_sign_mode!r}")

    def with_tau(self, tau: float) -> "FlowParams":
        return FlowParams(self.alpha, self.beta, tau, self.curvature_sign_mode)


class PerSegment:
    """Marks a field as constant on each edge (as opposed to nodal)."""

    __slots__ = ("values",)

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def __len__(self):
        return self.values.shape[0]


class Residual(NamedTuple):
    scalar_block: np.ndarray  # (N,)   first equation tested with phi_k
    vector_block: np.ndarray  # (N, 2) second equation tested with e_d phi_k

    def flat(self) -> np.ndarray:
        """Interleaved ``[r_x, r_y, r_kappa]`` per node, length ``3N``."""
        return np.column_stack([self.vector_block, self.scalar_block]).ravel()

    def max_abs(self) -> float:
        return float(max(np.abs(self.scalar_block).max(), np.abs(self.vector_block).max()))


def _limits(field, n: int):
    """One-sided limits on every edge: (value at edge start, value at edge end)."""
    if isinstance(field, PerSegment):
        vals = field.values
        if vals.shape[0] != n:
            raise ValueError(f"per-segment field has length {vals.shape[0]}, curve has {n} edges")
        return vals, vals
    vals = np.asarray(field, dtype=float)
    if vals.ndim == 0:
        vals = np.full(n, float(vals))
    if vals.shape[0] != n:
        raise ValueError(f"nodal field has length {vals.shape[0]}, curve has {n} nodes")
    return vals, np.roll(vals, -1, axis=0)


def mass_lumped_inner(u, v, curve: PolygonalCurve) -> float:
    """Trapezoidal inner product with one-sided limits at the nodes.

    ``u`` and ``v`` may be scalars, nodal arrays (``(N,)`` or ``(N, 2)``) or
    :class:`PerSegment` values.
    """
    n = curve.n
    u0, u1 = _limits(u, n)
    v0, v1 = _limits(v, n)
    uv0 = u0 * v0
    uv1 = u1 * v1
    if uv0.ndim == 2:
        uv0 = uv0.sum(axis=1)
    if uv1.ndim == 2:
        uv1 = uv1.sum(axis=1)
    a = np.hypot(*segment_vectors(curve).T)
    return 0.5 * float(np.sum(a * (uv1 + uv0)))


def arc_derivative(field, reference: PolygonalCurve) -> PerSegment:
    """Edge-wise derivative of a nodal field w.r.t. arc length of ``reference``."""
    f = np.asarray(field.nodes if isinstance(field, PolygonalCurve) else field, dtype=float)
    if f.shape[0] != reference.n:
        raise ValueError("field and reference curve differ in node count")
    lengths = _checked_lengths(segment_vectors(reference))
    df = np.roll(f, -1, axis=0) - f
    if df.ndim == 2:
        return PerSegment(df / lengths[:, None])
    return PerSegment(df / lengths)


def half_step_normal(curve_old: PolygonalCurve, curve_new: PolygonalCurve) -> np.ndarray:
    """``-(h_old + h_new)^perp / (2 |h_old|)`` per edge; not unit length in general."""
    if curve_old.n != curve_new.n:
        raise ValueError("curves differ in node count")
    h_old = segment_vectors(curve_old)
    lengths = _checked_lengths(h_old)
    return -perp(h_old + segment_vectors(curve_new)) / (2.0 * lengths[:, None])


def check_curvature_sign(kappa, alpha: float) -> None:
    """Raise if nodal curvature violates the positivity assumption for ``alpha``.

    ``alpha < 0`` needs ``kappa > 0``; ``0 < alpha != 1`` needs ``kappa >= 0``;
    ``alpha == 1`` puts no constraint.
    """
    kappa = np.asarray(kappa, dtype=float)
    if alpha < 0:
        bad = np.flatnonzero(~(kappa > 0))
        need = "> 0"
    elif alpha != 1:
        bad = np.flatnonzero(~(kappa >= 0))
        need = ">= 0"
    else:
        return
    if bad.size:
        j = int(bad[0])
        raise CurvatureSignViolation(
            f"alpha={alpha} requires kappa {need}; kappa[{j}]={kappa[j]!r} ({bad.size} nodes violate)"
        )


def kappa_power(kappa, p: float) -> np.ndarray:
    """``kappa**p`` with ``0**p = 0`` for ``p > 0``; integer powers of negatives allowed."""
    kappa = np.asarray(kappa, dtype=float)
    if p == 0:
        return np.ones_like(kappa)
    if float(p).is_integer():
        with np.errstate(divide="ignore"):
            return np.power(kappa, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.exp(p * np.log(kappa))
    if p > 0:
        out = np.where(kappa == 0.0, 0.0, out)
    return out


def _sign_check(kappa, params: FlowParams) -> None:
    if params.curvature_sign_mode == "assumption":
        check_curvature_sign(kappa, params.alpha)


def node_weights(curve: PolygonalCurve) -> np.ndarray:
    """Lumped mass ``(phi_k, 1)`` of every nodal hat function."""
    a = np.hypot(*segment_vectors(curve).T)
    return 0.5 * (np.roll(a, 1) + a)


def lambda_discrete(kappa, curve: PolygonalCurve, params: FlowParams) -> float:
    """Lumped mean of ``beta * kappa**alpha`` over ``curve``."""
    _sign_check(kappa, params)
    f = params.beta * kappa_power(kappa, params.alpha)
    return mass_lumped_inner(f, 1.0, curve) / mass_lumped_inner(1.0, 1.0, curve)


def lumped_normals(h_old: np.ndarray, h_new: np.ndarray) -> np.ndarray:
    """Nodal lumped half-step normal ``(n^{m+1/2}, phi_k)``, shape ``(N, 2)``.

    On edge ``i``, ``|h_old_i| n_i = -(h_old_i + h_new_i)^perp / 2``, so the
    old lengths cancel and the result only involves the two neighbours.
    """
    c = -perp(h_old + h_new) * 0.5
    return 0.5 * (np.roll(c, 1, axis=0) + c)


def _prev(v: np.ndarray) -> np.ndarray:
    """``v[k-1]`` for every ``k`` (cyclic); cheaper than ``np.roll`` on short arrays."""
    return np.concatenate((v[-1:], v[:-1]))


def _residual_kernel(x_new, kappa_new, x_old, h_old, a, w, total_length, params: FlowParams):
    """Residual on raw arrays; old-curve quantities are precomputed by the caller."""
    h_new = np.concatenate((x_new[1:], x_new[:1])) - x_new
    c = -perp(h_old + h_new) * 0.5
    nk = 0.5 * (_prev(c) + c)
    f = params.beta * kappa_power(kappa_new, params.alpha)
    lam = float(np.dot(w, f)) / total_length
    velocity = (x_new - x_old) / params.tau
    scalar = velocity[:, 0] * nk[:, 0] + velocity[:, 1] * nk[:, 1] - (f - lam) * w
    ds = h_new / a[:, None]
    vector = kappa_new[:, None] * nk - (_prev(ds) - ds)
    return Residual(scalar, vector), nk, velocity


def residual(
    curve_new: PolygonalCurve,
    kappa_new,
    curve_old: PolygonalCurve,
    params: FlowParams,
) -> Residual:
    """Both weak equations of one time step tested with every nodal hat."""
    if curve_new.n != curve_old.n:
        raise ValueError("curves differ in node count")
    kappa_new = np.asarray(kappa_new, dtype=float)
    if kappa_new.shape != (curve_old.n,):
        raise ValueError("kappa has wrong length")
    _sign_check(kappa_new, params)
    h_old = segment_vectors(curve_old)
    a = _checked_lengths(h_old)
    w = 0.5 * (np.roll(a, 1) + a)
    res, _, _ = _residual_kernel(
        curve_new.nodes, kappa_new, curve_old.nodes, h_old, a, w, float(np.sum(a)), params
    )
    return res


def project_curvature(curve: PolygonalCurve) -> np.ndarray:
    """Nodal curvature from the lumped identity ``kappa n = -X_ss`` on ``curve``.

    Lumping decouples the curvature equation into ``kappa_k N_k = T_k`` per
    node, where ``N_k`` is the length-weighted normal and ``T_k`` the jump of
    the unit tangent; ``kappa_k`` is the least-squares solution.
    """
    t, nrm, a = frames(curve)
    c = a[:, None] * nrm
    big_n = 0.5 * (np.roll(c, 1, axis=0) + c)
    big_t = np.roll(t, 1, axis=0) - t
    nn = np.einsum("ij,ij->i", big_n, big_n)
    w = 0.5 * (np.roll(a, 1) + a)
    bad = np.flatnonzero(np.sqrt(nn) < 1e-14 * w)
    if bad.size:
        raise SingularNodalNormal(f"adjacent edge normals cancel at node {int(bad[0])}")
    return np.einsum("ij,ij->i", big_n, big_t) / nn


def power_mean(weights, values, p: float) -> float:
    weights = np.asarray(weights, dtype=float)
    values = np.asarray(values, dtype=float)
    return float((np.dot(weights, kappa_power(values, p)) / weights.sum()) ** (1.0 / p))


def power_mean_pairs(alpha: float) -> list[tuple[str, float, float]]:
    """``(variable, p, q)`` pairs used for perimeter decrease when ``|alpha| != 1``.

    ``variable`` is ``"kappa^alpha"`` or ``"kappa"``: the sample the power
    means are taken of.
    """
    if alpha == 0 or abs(alpha) == 1:
        return []
    r = (alpha + 1.0) / alpha
    if alpha > 0:
        return [("kappa^alpha", 1.0, r), ("kappa", 1.0, alpha + 1.0)]
    return [("kappa^alpha", r, 1.0), ("kappa", alpha + 1.0, 1.0)]


def power_mean_inequality_holds(weights, values, p: float, q: float, rtol: float = 1e-12) -> bool:
    """Check ``M_p <= M_q`` for nonnegative weights and admissible values."""
    if not (p < q and p != 0 and q != 0):
        raise ValueError(f"need nonzero p < q, got p={p}, q={q}")
    weights = np.asarray(weights, dtype=float)
    values = np.asarray(values, dtype=float)
    if weights.min() < 0 or not weights.sum() > 0:
        raise ValueError("weights must be nonnegative with positive sum")
    if (p < 0 and values.min() <= 0) or values.min() < 0:
        raise ValueError("values out of the admissible range for p")
    lo = power_mean(weights, values, p)
    hi = power_mean(weights, values, q)
    return lo <= hi * (1.0 + rtol) + 1e-300
