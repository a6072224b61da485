"""Newton and Picard solvers for one time step of the scheme.

Unknowns are interleaved per node as ``[x_k, y_k, kappa_k]``; residual rows
use the same layout (see :meth:`curveflow.scheme.Residual.flat`).  Every
node couples only to its two neighbours, so the local matrix is cyclic
block-tridiagonal with 3x3 blocks.  The nonlocal multiplier adds a dense
rank-one term that is handled by the Sherman-Morrison formula.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg.lapack import dgbsv as _gbsv, dgetrf as _getrf, dgetrs as _getrs
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .curve import PolygonalCurve, _checked_lengths, area, perp, segment_vectors
from .errors import ConfigError, CurvatureSignViolation, MaxIterExceeded, SingularSystem
from .scheme import FlowParams, _prev, _residual_kernel, _sign_check, kappa_power

log = logging.getLogger(__name__)

_PERP = np.array([[0.0, 1.0], [-1.0, 0.0]])


@dataclass(frozen=True)
class SolverConfig:
    method: str = "newton"
    tol: float = 1e-12
    max_iter: int = 50
    # Picard only: use alpha*beta instead of beta on the lagged curvature term.
    picard_alpha_beta: bool = False
    dense_threshold: int = 0

    def __post_init__(self):
        if self.method not in ("newton", "picard"):
            raise ConfigError(f"unknown solver {self.method!r}")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")


class AssembledSystem:
    """``(local_matrix + u v^T) z = rhs`` for one linear solve.

    ``local_matrix`` is built lazily from the block data so the dense path
    never pays for sparse construction.
    """

    def __init__(self, local_matrix=None, rank_one=None, rhs=None, *, block_data=None, pattern=None):
        if local_matrix is None and block_data is None:
            raise ValueError("need local_matrix or block_data")
        self._local = None if local_matrix is None else sp.csc_matrix(local_matrix)
        self._data = block_data
        self._pattern = pattern
        self.rank_one = rank_one
        self.rhs = rhs

    @property
    def local_matrix(self) -> sp.csc_matrix:
        if self._local is None:
            self._local = self._pattern.csc(self._data)
        return self._local

    @property
    def size(self) -> int:
        return self.rhs.shape[0]

    def is_finite(self) -> bool:
        u, v = self.rank_one
        data = self._data if self._data is not None else self.local_matrix.data
        return bool(np.all(np.isfinite(data)) and np.all(np.isfinite(u)) and np.all(np.isfinite(v)))

    def dense(self) -> np.ndarray:
        u, v = self.rank_one
        if self._data is None:
            mat = self.local_matrix.toarray()
        else:
            size = self._pattern.size
            mat = np.zeros(size * size)
            mat[self._pattern.flat] = self._data
            mat = mat.reshape(size, size)
        nz_u = np.flatnonzero(u)
        nz_v = np.flatnonzero(v)
        mat[np.ix_(nz_u, nz_v)] += np.outer(u[nz_u], v[nz_v])
        return mat


@dataclass
class StepReport:
    iterations: int
    final_update_norm: float
    lambda_: float
    area: float
    perimeter: float
    mesh_ratio: float
    update_norms: list[float] = field(default_factory=list)


class _Pattern:
    """Index maps of the cyclic 3x3 block-tridiagonal sparsity for ``n`` nodes.

    Entry order is ``(offset, node, row, col)`` so that an array of blocks of
    shape ``(3, n, 3, 3)`` flattens straight onto it.
    """

    _cache: dict[int, "_Pattern"] = {}

    def __init__(self, n: int):
        k = np.arange(n)[None, :, None, None]
        off = np.array([-1, 0, 1])[:, None, None, None]
        r = np.arange(3)[None, None, :, None]
        c = np.arange(3)[None, None, None, :]
        shape = (3, n, 3, 3)
        rows = np.broadcast_to(3 * k + r, shape).ravel()
        cols = np.broadcast_to(3 * ((k + off) % n) + c, shape).ravel()
        self.n = n
        self.size = 3 * n
        self.flat = rows * self.size + cols
        order = np.lexsort((rows, cols))
        self.csc_order = order
        self.indices = rows[order].astype(np.int32)
        self.indptr = np.searchsorted(cols[order], np.arange(self.size + 1)).astype(np.int32)
        # Folded node order 0, n-1, 1, n-2, ... puts cyclic neighbours at most
        # two slots apart, so the permuted matrix is banded with bandwidth 8.
        fold = np.empty(n, dtype=int)
        fold[0::2] = np.arange((n + 1) // 2)
        fold[1::2] = n - 1 - np.arange(n // 2)
        slot = np.empty(n, dtype=int)
        slot[fold] = np.arange(n)
        self.perm = (3 * fold[:, None] + np.arange(3)).ravel()  # permuted -> original
        inv = np.empty(self.size, dtype=int)
        inv[self.perm] = np.arange(self.size)
        pr, pc = inv[rows], inv[cols]
        bw = int(np.max(np.abs(pr - pc)))
        self.bandwidth = bw
        # LAPACK gbsv storage: (2*kl + ku + 1, size), entry (i, j) at row kl + ku + i - j
        self.band_shape = (3 * bw + 1, self.size)
        self.band_flat = (2 * bw + pr - pc) * self.size + pc

    @classmethod
    def get(cls, n: int) -> "_Pattern":
        if n < 3:
            raise ValueError("need at least 3 nodes")
        if n not in cls._cache:
            cls._cache[n] = cls(n)
        return cls._cache[n]

    def banded(self, data: np.ndarray) -> np.ndarray:
        ab = np.zeros(self.band_shape[0] * self.band_shape[1])
        ab[self.band_flat] = data
        return ab.reshape(self.band_shape)

    def csc(self, data: np.ndarray) -> sp.csc_matrix:
        return sp.csc_matrix((data[self.csc_order], self.indices, self.indptr), shape=(self.size, self.size))


class _StepContext:
    """Old-curve quantities shared by every inner iteration of one time step."""

    def __init__(self, curve_old: PolygonalCurve, params: FlowParams):
        self.params = params
        self.x_old = curve_old.nodes
        self.n = n = curve_old.n
        self.h_old = segment_vectors(curve_old)
        self.a = a = _checked_lengths(self.h_old)
        self.w = 0.5 * (_prev(a) + a)
        self.total_length = float(np.sum(a))
        self.pattern = _Pattern.get(n)
        # stiffness part of the position rows, identical for Newton and Picard
        inv = 1.0 / a
        inv_prev = _prev(inv)
        base = np.zeros((3, n, 3, 3))
        for d in range(2):
            base[0, :, d, d] = inv_prev
            base[1, :, d, d] = -(inv_prev + inv)
            base[2, :, d, d] = inv
        self.base = base

    def residual(self, x, kappa):
        return _residual_kernel(
            x, kappa, self.x_old, self.h_old, self.a, self.w, self.total_length, self.params
        )

    def _system(self, blocks, kappa_coef, lhs_rhs) -> AssembledSystem:
        u = np.zeros(3 * self.n)
        v = np.zeros(3 * self.n)
        u[2::3] = self.w
        v[2::3] = kappa_coef * self.w / self.total_length
        return AssembledSystem(None, (u, v), lhs_rhs, block_data=blocks.ravel(), pattern=self.pattern)

    def newton(self, x, kappa) -> AssembledSystem:
        params = self.params
        _sign_check(kappa, params)
        res, nk, vel = self.residual(x, kappa)
        dpow = params.alpha * kappa_power(kappa, params.alpha - 1.0)
        blocks = self.base.copy()
        q = kappa[:, None, None] * (_PERP / 4.0)
        blocks[0, :, :2, :2] += q
        blocks[2, :, :2, :2] -= q
        blocks[1, :, :2, 2] = nk
        blocks[1, :, 2, :2] = nk / params.tau
        pv = perp(vel) / 4.0
        blocks[2, :, 2, :2] = pv
        blocks[0, :, 2, :2] = -pv
        blocks[1, :, 2, 2] = -params.beta * dpow * self.w
        return self._system(blocks, params.beta * dpow, -res.flat())

    def picard(self, x, kappa, alpha_beta: bool = False) -> AssembledSystem:
        params = self.params
        _sign_check(kappa, params)
        h_new = np.concatenate((x[1:], x[:1])) - x
        c = -perp(self.h_old + h_new) * 0.5
        nk = 0.5 * (_prev(c) + c)
        coef = params.beta * (params.alpha if alpha_beta else 1.0)
        lag = coef * kappa_power(kappa, params.alpha - 1.0)
        blocks = self.base.copy()
        blocks[1, :, :2, 2] = nk
        blocks[1, :, 2, :2] = nk / params.tau
        blocks[1, :, 2, 2] = -lag * self.w
        rhs = np.zeros(3 * self.n)
        rhs[2::3] = (self.x_old[:, 0] * nk[:, 0] + self.x_old[:, 1] * nk[:, 1]) / params.tau
        return self._system(blocks, lag, rhs)


def assemble_newton(
    curve_iter: PolygonalCurve,
    kappa_iter,
    curve_old: PolygonalCurve,
    params: FlowParams,
) -> AssembledSystem:
    """Exact Jacobian of :func:`residual` at the iterate, with ``rhs = -residual``.

    The local matrix holds the linearized half-step normal, the curvature
    coupling and the stiffness; ``rank_one`` carries the derivative of the
    nonlocal multiplier.
    """
    if curve_iter.n != curve_old.n:
        raise ValueError("curves differ in node count")
    ctx = _StepContext(curve_old, params)
    return ctx.newton(curve_iter.nodes, np.asarray(kappa_iter, dtype=float))


def assemble_picard(
    curve_iter: PolygonalCurve,
    kappa_iter,
    curve_old: PolygonalCurve,
    params: FlowParams,
    alpha_beta: bool = False,
) -> AssembledSystem:
    """Linear system for the next Picard iterate (full values, not increments)."""
    if curve_iter.n != curve_old.n:
        raise ValueError("curves differ in node count")
    ctx = _StepContext(curve_old, params)
    return ctx.picard(curve_iter.nodes, np.asarray(kappa_iter, dtype=float), alpha_beta)


def _dense_solve(mat: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    lu, piv, info = _getrf(mat, overwrite_a=True)
    if info < 0:
        raise SingularSystem(f"LAPACK getrf failed (info={info})")
    diag = np.abs(np.diagonal(lu))
    if info > 0 or diag.min() < 1e-14 * diag.max():
        raise SingularSystem("pivot below 1e-14 relative to the largest pivot")
    z, info = _getrs(lu, piv, rhs)
    return z


def _banded_solve(sys: AssembledSystem) -> np.ndarray:
    pat = sys._pattern
    bw = pat.bandwidth
    u, v = sys.rank_one
    rhs = np.column_stack([sys.rhs[pat.perm], u[pat.perm]])
    lub, _, sol, info = _gbsv(bw, bw, pat.banded(sys._data), rhs, overwrite_ab=True, overwrite_b=True)
    if info != 0:
        raise RuntimeError(f"gbsv info={info}")
    diag = np.abs(lub[2 * bw])
    if diag.min() < 1e-14 * diag.max():
        raise RuntimeError("small pivot")
    ab = np.empty(sys.size)
    au = np.empty(sys.size)
    ab[pat.perm] = sol[:, 0]
    au[pat.perm] = sol[:, 1]
    denom = 1.0 + v @ au
    if abs(denom) < 1e-14:
        raise RuntimeError("rank-one denominator vanishes")
    return ab - au * ((v @ ab) / denom)


def _sparse_solve(sys: AssembledSystem) -> np.ndarray:
    u, v = sys.rank_one
    b = sys.rhs
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        lu = spla.splu(sys.local_matrix, permc_spec="COLAMD")
    diag = np.abs(lu.U.diagonal())
    if diag.min() < 1e-14 * diag.max():
        raise RuntimeError("small pivot")
    ab = lu.solve(b)
    au = lu.solve(u)
    denom = 1.0 + v @ au
    if abs(denom) < 1e-14:
        raise RuntimeError("rank-one denominator vanishes")
    return ab - au * ((v @ ab) / denom)


def solve_system(sys: AssembledSystem, dense_threshold: int = 0) -> np.ndarray:
    """Solve ``(A + u v^T) z = b``.

    The structured path factors the banded (node-folded) local matrix, or a
    sparse LU when only a matrix was supplied, and applies the
    Sherman-Morrison update: two solves and a scalar correction.  Systems of
    size ``<= dense_threshold``, and any breakdown of the structured path, go
    through a dense LU of ``A + u v^T``.
    """
    if not sys.is_finite():
        raise SingularSystem("non-finite entries in the assembled system")
    if sys.size <= dense_threshold:
        return _dense_solve(sys.dense(), sys.rhs)
    try:
        z = _banded_solve(sys) if sys._data is not None else _sparse_solve(sys)
        if not np.all(np.isfinite(z)):
            raise RuntimeError("non-finite solution")
        return z
    except (RuntimeError, spla.MatrixRankWarning) as exc:
        log.debug("structured solve failed (%s); using dense LU", exc)
        return _dense_solve(sys.dense(), sys.rhs)


def _update_norm(dx: np.ndarray, dk: np.ndarray) -> float:
    return float(np.max(np.hypot(dx[:, 0], dx[:, 1]) + np.abs(dk)))


def _iterate(
    curve_old: PolygonalCurve,
    kappa_old,
    params: FlowParams,
    config: SolverConfig,
    step: Callable[["_StepContext", np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]],
) -> tuple[PolygonalCurve, np.ndarray, StepReport]:
    kappa_old = np.asarray(kappa_old, dtype=float)
    if kappa_old.shape != (curve_old.n,):
        raise ValueError("kappa has wrong length")
    _sign_check(kappa_old, params)
    ctx = _StepContext(curve_old, params)
    x = curve_old.nodes.copy()
    kappa = kappa_old.copy()
    norms: list[float] = []
    for it in range(1, config.max_iter + 1):
        try:
            x_next, kappa_next = step(ctx, x, kappa)
        except CurvatureSignViolation as exc:
            raise MaxIterExceeded(f"iterate {it} left the admissible curvature range: {exc}") from exc
        if not (np.all(np.isfinite(x_next)) and np.all(np.isfinite(kappa_next))):
            raise MaxIterExceeded(f"iterate {it} is not finite")
        norm = _update_norm(x_next - x, kappa_next - kappa)
        norms.append(norm)
        x, kappa = x_next, kappa_next
        if norm <= config.tol:
            break
        if len(norms) > 1 and norm > 1e3 * norms[-2]:
            raise MaxIterExceeded(f"update norm grew from {norms[-2]:.3e} to {norm:.3e}; diverging")
    else:
        raise MaxIterExceeded(
            f"{config.method} did not reach tol={config.tol:g} in {config.max_iter} iterations "
            f"(last update {norms[-1]:.3e})"
        )
    new = PolygonalCurve(x)
    _sign_check(kappa, params)
    lam = float(np.dot(ctx.w, params.beta * kappa_power(kappa, params.alpha))) / ctx.total_length
    lengths = np.hypot(*segment_vectors(new).T)
    report = StepReport(
        iterations=len(norms),
        final_update_norm=norms[-1],
        lambda_=lam,
        area=area(new),
        perimeter=float(np.sum(lengths)),
        mesh_ratio=float(lengths.max() / lengths.min()) if lengths.min() > 0 else float("inf"),
        update_norms=norms,
    )
    return new, kappa, report


def newton_advance(curve_old, kappa_old, params: FlowParams, config: SolverConfig = SolverConfig()):
    """One time step by undamped Newton iteration from ``(X^m, kappa^m)``.

    Stops once ``max_j (|dX_j| + |dkappa_j|) <= config.tol``.
    """

    def step(ctx, x, kappa):
        z = solve_system(ctx.newton(x, kappa), config.dense_threshold).reshape(-1, 3)
        return x + z[:, :2], kappa + z[:, 2]

    return _iterate(curve_old, kappa_old, params, config, step)


def picard_advance(curve_old, kappa_old, params: FlowParams, config: SolverConfig = SolverConfig(method="picard")):
    """One time step by Picard iteration (lagged normal and lagged curvature power)."""

    def step(ctx, x, kappa):
        z = solve_system(ctx.picard(x, kappa, config.picard_alpha_beta), config.dense_threshold)
        z = z.reshape(-1, 3)
        return z[:, :2].copy(), z[:, 2].copy()

    return _iterate(curve_old, kappa_old, params, config, step)


def advance(curve_old, kappa_old, params: FlowParams, config: SolverConfig = SolverConfig()):
    """Dispatch on ``config.method``."""
    if config.method == "newton":
        return newton_advance(curve_old, kappa_old, params, config)
    return picard_advance(curve_old, kappa_old, params, config)
