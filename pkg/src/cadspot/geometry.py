"""CAD primitives, their segment approximations, and graph feature vectors.

Coordinates are millimetres with +y pointing up. Angles are radians unless a
name says otherwise. All lengths fed to the network are divided by
``LENGTH_SCALE``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from .errors import DegeneratePrimitive, InvalidPrimitive

LENGTH_SCALE = 1000.0
TWO_PI = 2.0 * math.pi


class Kind(str, Enum):
    SEGMENT = "segment"
    ARC = "arc"
    CIRCLE = "circle"
    ELLIPSE = "ellipse"

    @property
    def index(self) -> int:
        return _KIND_ORDER.index(self)


_KIND_ORDER = [Kind.SEGMENT, Kind.ARC, Kind.CIRCLE, Kind.ELLIPSE]


def kind_from_index(i: int) -> Kind:
    return _KIND_ORDER[i]


@dataclass(frozen=True)
class Segment:
    p: tuple[float, float]
    q: tuple[float, float]

    def __post_init__(self):
        if tuple(self.p) == tuple(self.q):
            raise InvalidPrimitive(f"segment endpoints coincide at {self.p}")


@dataclass(frozen=True)
class Arc:
    """Counter-clockwise arc from ``start`` to ``end`` (radians)."""

    center: tuple[float, float]
    radius: float
    start: float
    end: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidPrimitive(f"arc radius must be positive, got {self.radius}")

    def point_at(self, angle: float) -> tuple[float, float]:
        return (self.center[0] + self.radius * math.cos(angle),
                self.center[1] + self.radius * math.sin(angle))

    @property
    def sweep(self) -> float:
        return (self.end - self.start) % TWO_PI


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidPrimitive(f"circle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class Ellipse:
    """Ellipse with semi-axis ``rx`` along ``rotation`` and ``ry`` across it."""

    center: tuple[float, float]
    rx: float
    ry: float
    rotation: float = 0.0

    def __post_init__(self):
        if not (self.rx > 0 and self.ry > 0):
            raise InvalidPrimitive(f"ellipse semi-axes must be positive, got {self.rx}, {self.ry}")


Geometry = Union[Segment, Arc, Circle, Ellipse]
_KIND_OF = {Segment: Kind.SEGMENT, Arc: Kind.ARC, Circle: Kind.CIRCLE, Ellipse: Kind.ELLIPSE}


@dataclass(frozen=True)
class Primitive:
    """One labelled graphic element. ``instance`` is -1 for stuff and background."""

    geometry: Geometry
    semantic: int = 0
    instance: int = -1

    def __post_init__(self):
        if self.semantic < 0:
            raise InvalidPrimitive(f"semantic label must be >= 0, got {self.semantic}")
        if self.instance < -1:
            raise InvalidPrimitive(f"instance id must be >= -1, got {self.instance}")

    @property
    def kind(self) -> Kind:
        return _KIND_OF[type(self.geometry)]


@dataclass(frozen=True)
class ApproxSegment:
    p: tuple[float, float]
    q: tuple[float, float]
    kind: Kind = Kind.SEGMENT

    def __post_init__(self):
        if tuple(self.p) == tuple(self.q):
            raise InvalidPrimitive("approximated segment is degenerate")

    @property
    def length(self) -> float:
        return math.hypot(self.q[0] - self.p[0], self.q[1] - self.p[1])

    @property
    def midpoint(self) -> tuple[float, float]:
        return ((self.p[0] + self.q[0]) / 2.0, (self.p[1] + self.q[1]) / 2.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.p[0], self.p[1], self.q[0], self.q[1]], dtype=float)


@dataclass(frozen=True)
class VertexFeature:
    cos2a: float
    sin2a: float
    length: float
    type_onehot: tuple[int, int, int, int]

    def as_array(self) -> np.ndarray:
        return np.array([self.cos2a, self.sin2a, self.length, *self.type_onehot], dtype=float)


@dataclass(frozen=True)
class EdgeFeature:
    delta: tuple[float, float]
    angle: float
    ratio: float
    regularity: tuple[int, int, int]  # parallel, orthogonal, shared endpoint

    def as_array(self) -> np.ndarray:
        return np.array([*self.delta, self.angle, self.ratio, *self.regularity], dtype=float)


@dataclass(frozen=True)
class RegularityConfig:
    angle_tol_deg: float = 5.0
    endpoint_tol: float = 100.0


def approximate_segment(prim: Primitive) -> ApproxSegment:
    """Replace a primitive by its representative segment.

    Arcs become their chord, circles their horizontal diameter and ellipses
    their major axis.
    """
    g = prim.geometry
    kind = prim.kind
    if isinstance(g, Segment):
        return ApproxSegment(tuple(g.p), tuple(g.q), kind)
    if isinstance(g, Arc):
        if math.isclose(g.sweep, 0.0, abs_tol=1e-12) or math.isclose(g.sweep, TWO_PI, abs_tol=1e-12):
            raise DegeneratePrimitive(f"arc start and end angles coincide ({g.start}, {g.end})")
        return ApproxSegment(g.point_at(g.start), g.point_at(g.end), kind)
    if isinstance(g, Circle):
        cx, cy = g.center
        return ApproxSegment((cx - g.radius, cy), (cx + g.radius, cy), kind)
    if isinstance(g, Ellipse):
        if g.rx >= g.ry:
            half, theta = g.rx, g.rotation
        else:
            half, theta = g.ry, g.rotation + math.pi / 2.0
        dx, dy = half * math.cos(theta), half * math.sin(theta)
        cx, cy = g.center
        return ApproxSegment((cx - dx, cy - dy), (cx + dx, cy + dy), kind)
    raise TypeError(f"unknown geometry {type(g).__name__}")


def bounding_box(prim: Primitive) -> tuple[float, float, float, float]:
    """Exact axis-aligned extent ``(xmin, ymin, xmax, ymax)`` of the true curve."""
    g = prim.geometry
    if isinstance(g, Segment):
        xs, ys = (g.p[0], g.q[0]), (g.p[1], g.q[1])
        return min(xs), min(ys), max(xs), max(ys)
    if isinstance(g, Circle):
        cx, cy = g.center
        return cx - g.radius, cy - g.radius, cx + g.radius, cy + g.radius
    if isinstance(g, Arc):
        pts = [g.point_at(g.start), g.point_at(g.end)]
        for k in range(4):
            a = k * math.pi / 2.0
            if (a - g.start) % TWO_PI <= g.sweep:
                pts.append(g.point_at(a))
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        return min(xs), min(ys), max(xs), max(ys)
    if isinstance(g, Ellipse):
        c, s = math.cos(g.rotation), math.sin(g.rotation)
        hx = math.hypot(g.rx * c, g.ry * s)
        hy = math.hypot(g.rx * s, g.ry * c)
        cx, cy = g.center
        return cx - hx, cy - hy, cx + hx, cy + hy
    raise TypeError(f"unknown geometry {type(g).__name__}")


def line_angle(dx, dy):
    """Angle of the undirected line with direction (dx, dy), in [0, pi)."""
    a = np.mod(np.arctan2(dy, dx), np.pi)
    # mod can return pi itself for tiny negative inputs
    return np.where(a >= np.pi, 0.0, a)


def acute_angle(a, b):
    """Acute angle between undirected lines at angles ``a`` and ``b``."""
    d = np.mod(np.abs(a - b), np.pi)
    return np.minimum(d, np.pi - d)


def vertex_feature(s: ApproxSegment) -> VertexFeature:
    a = float(line_angle(s.q[0] - s.p[0], s.q[1] - s.p[1]))
    onehot = [0, 0, 0, 0]
    onehot[s.kind.index] = 1
    return VertexFeature(math.cos(2 * a), math.sin(2 * a), s.length / LENGTH_SCALE, tuple(onehot))


def edge_feature(si: ApproxSegment, sj: ApproxSegment,
                 cfg: RegularityConfig = RegularityConfig()) -> EdgeFeature:
    row = edge_features(si.as_array()[None, :], sj.as_array()[None, :], cfg)[0]
    return EdgeFeature((float(row[0]), float(row[1])), float(row[2]), float(row[3]),
                       (int(row[4]), int(row[5]), int(row[6])))


def vertex_features(segs: np.ndarray, kinds: np.ndarray) -> np.ndarray:
    """Vectorised :func:`vertex_feature` over an ``N x 4`` segment array."""
    d = segs[:, 2:4] - segs[:, 0:2]
    a = line_angle(d[:, 0], d[:, 1])
    out = np.zeros((len(segs), 7))
    out[:, 0] = np.cos(2 * a)
    out[:, 1] = np.sin(2 * a)
    out[:, 2] = np.hypot(d[:, 0], d[:, 1]) / LENGTH_SCALE
    out[np.arange(len(segs)), 3 + np.asarray(kinds, dtype=int)] = 1.0
    return out


def edge_features(si: np.ndarray, sj: np.ndarray,
                  cfg: RegularityConfig = RegularityConfig()) -> np.ndarray:
    """Edge features for row-aligned segment arrays ``si`` and ``sj`` (``E x 4``)."""
    mi = (si[:, 0:2] + si[:, 2:4]) / 2.0
    mj = (sj[:, 0:2] + sj[:, 2:4]) / 2.0
    di = si[:, 2:4] - si[:, 0:2]
    dj = sj[:, 2:4] - sj[:, 0:2]
    li = np.hypot(di[:, 0], di[:, 1])
    lj = np.hypot(dj[:, 0], dj[:, 1])
    angle = acute_angle(line_angle(di[:, 0], di[:, 1]), line_angle(dj[:, 0], dj[:, 1]))
    tol = math.radians(cfg.angle_tol_deg)
    parallel = angle <= tol
    orthogonal = np.abs(angle - math.pi / 2.0) <= tol
    ends_i = (si[:, 0:2], si[:, 2:4])
    ends_j = (sj[:, 0:2], sj[:, 2:4])
    gap = np.full(len(si), np.inf)
    for a in ends_i:
        for b in ends_j:
            gap = np.minimum(gap, np.hypot(*(a - b).T))
    shared = gap <= cfg.endpoint_tol

    out = np.empty((len(si), 7))
    out[:, 0:2] = (mj - mi) / LENGTH_SCALE
    out[:, 2] = angle
    out[:, 3] = li / (li + lj)
    out[:, 4] = parallel
    out[:, 5] = orthogonal
    out[:, 6] = shared
    return out
