"""Closed polygonal curves and their exact discrete geometry.

Nodes are stored in clockwise order so that the signed area
``A = 1/2 * sum (x_j - x_{j-1}) (y_j + y_{j-1})`` is positive and the edge
normal ``-(h_j)^perp / |h_j|`` (``perp`` = clockwise quarter turn) points
outward.

Edge ``i`` (0-based) joins node ``i`` to node ``i+1`` (mod N), so node ``k``
sits between edge ``k-1`` (arriving) and edge ``k`` (leaving).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from os import PathLike
from typing import NamedTuple

import numpy as np

from .errors import InvalidCurve, ZeroSegment

log = logging.getLogger(__name__)


def perp(v: np.ndarray) -> np.ndarray:
    """Clockwise rotation by pi/2, ``(a, b) -> (b, -a)``, along the last axis."""
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    out[..., 0] = v[..., 1]
    out[..., 1] = -v[..., 0]
    return out


@dataclass(frozen=True, eq=False)
class PolygonalCurve:
    """Immutable closed polygon given by its ``(N, 2)`` node array.

    Construction only checks shape and finiteness. Edge-length and
    orientation invariants are enforced by :meth:`validated` and by the
    operations that need them.
    """

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float, copy=True)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise InvalidCurve(f"nodes must have shape (N, 2), got {nodes.shape}")
        if nodes.shape[0] < 3:
            raise InvalidCurve(f"a closed curve needs N >= 3 nodes, got {nodes.shape[0]}")
        if not np.all(np.isfinite(nodes)):
            raise InvalidCurve("node coordinates must be finite")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    def __len__(self) -> int:
        return self.nodes.shape[0]

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.nodes[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.nodes[:, 1]

    def reversed(self) -> "PolygonalCurve":
        return PolygonalCurve(self.nodes[::-1])

    def translated(self, shift) -> "PolygonalCurve":
        return PolygonalCurve(self.nodes + np.asarray(shift, dtype=float))

    def scaled(self, factor: float, center=(0.0, 0.0)) -> "PolygonalCurve":
        c = np.asarray(center, dtype=float)
        return PolygonalCurve(c + factor * (self.nodes - c))

    def centroid(self) -> np.ndarray:
        """Area centroid of the enclosed region (orientation independent)."""
        x, y = self.x, self.y
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        cross = x * yn - xn * y
        a = 0.5 * cross.sum()
        cx = ((x + xn) * cross).sum() / (6.0 * a)
        cy = ((y + yn) * cross).sum() / (6.0 * a)
        return np.array([cx, cy])

    def oriented(self) -> "PolygonalCurve":
        """Return the curve in clockwise storage order (positive area)."""
        if area(self) < 0.0:
            log.info("reversing counterclockwise curve with %d nodes to clockwise storage", self.n)
            return self.reversed()
        return self

    def validated(self) -> "PolygonalCurve":
        """Check the storage invariants: non-degenerate edges and positive area."""
        lengths = segment_lengths(self)
        if lengths.min() <= 0.0:
            raise ZeroSegment(f"edge {int(lengths.argmin())} has zero length")
        a = area(self)
        if not a > 0.0:
            raise InvalidCurve(f"curve must have positive (clockwise) area, got {a!r}")
        return self

    def to_json(self) -> str:
        return json.dumps(self.nodes.tolist())

    @classmethod
    def from_json(cls, text: str) -> "PolygonalCurve":
        data = json.loads(text)
        if isinstance(data, dict):
            data = data.get("nodes")
        if not isinstance(data, list) or not all(
            isinstance(p, list) and len(p) == 2 for p in data
        ):
            raise InvalidCurve("curve JSON must be an array of [x, y] pairs")
        try:
            nodes = np.array(data, dtype=float)
        except (TypeError, ValueError) as exc:
            raise InvalidCurve(f"non-numeric coordinate in curve JSON: {exc}") from None
        return cls(nodes).oriented()

    @classmethod
    def load(cls, path: str | PathLike) -> "PolygonalCurve":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path: str | PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


class SegmentFrame(NamedTuple):
    tangent: np.ndarray
    normal: np.ndarray
    length: np.ndarray


def segment_vectors(curve: PolygonalCurve) -> np.ndarray:
    """Edge vectors ``h[i] = nodes[i+1] - nodes[i]`` (cyclic), shape ``(N, 2)``."""
    nodes = curve.nodes
    return np.roll(nodes, -1, axis=0) - nodes


def segment_lengths(curve: PolygonalCurve) -> np.ndarray:
    return np.hypot(*segment_vectors(curve).T)


def _checked_lengths(h: np.ndarray) -> np.ndarray:
    lengths = np.hypot(h[:, 0], h[:, 1])
    if lengths.min() <= 0.0:
        raise ZeroSegment(f"edge {int(lengths.argmin())} has zero length")
    return lengths


def frames(curve: PolygonalCurve) -> SegmentFrame:
    """Per-edge unit tangent, outward unit normal and length."""
    h = segment_vectors(curve)
    lengths = _checked_lengths(h)
    tangent = h / lengths[:, None]
    return SegmentFrame(tangent, -perp(tangent), lengths)


def area(curve: PolygonalCurve) -> float:
    """Signed area, positive for clockwise node order."""
    x, y = curve.x, curve.y
    xp, yp = np.roll(x, 1), np.roll(y, 1)
    return 0.5 * float(np.sum((x - xp) * (y + yp)))


def perimeter(curve: PolygonalCurve) -> float:
    return float(np.sum(segment_lengths(curve)))


def mesh_ratio(curve: PolygonalCurve) -> float:
    """Longest over shortest edge length."""
    lengths = _checked_lengths(segment_vectors(curve))
    return float(lengths.max() / lengths.min())


def h_min(curve: PolygonalCurve) -> float:
    return float(segment_lengths(curve).min())
