"""Initial curves: ellipse, circle, the three flower/dumbbell-like cases, or a file."""
from __future__ import annotations

from dataclasses import dataclass
from os import PathLike

import numpy as np

from .curve import PolygonalCurve
from .errors import InvalidSpec

KINDS = ("ellipse", "circle", "case1", "case2", "case3", "file")


def _ellipse(theta, a, b):
    return a * np.cos(theta), b * np.sin(theta)


def _case1(theta):
    r = 2.0 + np.cos(6.0 * theta)
    return r * np.cos(theta), r * np.sin(theta)


def _case2(theta):
    s = np.sin(theta)
    return np.cos(theta), 2.0 * s - 1.9 * s**3


def _case3(theta):
    s, c = np.sin(theta), np.cos(theta)
    return c, 0.5 * s + np.sin(c) + (0.2 + s * np.sin(3.0 * theta) ** 2) * s


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    n_nodes: int
    a: float = 3.0
    b: float = 1.0
    r: float = 1.0
    path: str | PathLike | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown shape kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "file" and (not isinstance(self.n_nodes, (int, np.integer)) or self.n_nodes < 3):
            raise InvalidSpec(f"n_nodes must be an integer >= 3, got {self.n_nodes!r}")
        if self.kind == "ellipse" and not (self.a > 0 and self.b > 0):
            raise InvalidSpec("ellipse semi-axes must be positive")
        if self.kind == "circle" and not self.r > 0:
            raise InvalidSpec("circle radius must be positive")
        if self.kind == "file" and self.path is None:
            raise InvalidSpec("file shape needs a path")

    def parametrization(self):
        """Counterclockwise parametrization ``theta -> (x, y)`` on ``[0, 2 pi)``."""
        if self.kind == "ellipse":
            return lambda t: _ellipse(t, self.a, self.b)
        if self.kind == "circle":
            return lambda t: _ellipse(t, self.r, self.r)
        return {"case1": _case1, "case2": _case2, "case3": _case3}[self.kind]


def generate(spec: ShapeSpec) -> PolygonalCurve:
    """Sample ``theta_j = 2 pi j / N`` and store the nodes clockwise."""
    if spec.kind == "file":
        return PolygonalCurve.load(spec.path)
    theta = 2.0 * np.pi * np.arange(spec.n_nodes) / spec.n_nodes
    x, y = spec.parametrization()(theta)
    nodes = np.column_stack([x, y])
    # reverse to clockwise while keeping theta = 0 as node 0
    nodes = np.roll(nodes[::-1], 1, axis=0)
    return PolygonalCurve(nodes)


def regular_polygon(n: int, radius: float = 1.0, center=(0.0, 0.0)) -> PolygonalCurve:
    c = np.asarray(center, dtype=float)
    return generate(ShapeSpec("circle", n, r=radius)).translated(c)
