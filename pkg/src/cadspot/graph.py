"""Drawing graph construction: epsilon neighbourhoods, collinear links, degree cap."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyDrawing, InvalidPrimitive, TooManyVertices
from .geometry import (
    ApproxSegment,
    Primitive,
    RegularityConfig,
    acute_angle,
    approximate_segment,
    bounding_box,
    edge_features,
    line_angle,
    vertex_features,
)

log = logging.getLogger(__name__)

MAX_VERTICES = 4096
_ROW_BLOCK = 256


@dataclass(frozen=True)
class GraphConfig:
    epsilon: float = 300.0
    max_degree: int = 30
    collinear_angle_tol: float = 5.0  # degrees
    collinear_lateral_tol: float = 100.0
    rng_seed: int = 0
    max_vertices: int = MAX_VERTICES
    regularity: RegularityConfig = field(default_factory=RegularityConfig)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_degree < 1:
            raise ValueError("max_degree must be >= 1")
        if self.collinear_angle_tol < 0 or self.collinear_lateral_tol < 0:
            raise ValueError("collinearity tolerances must be non-negative")
        if self.rng_seed < 0:
            raise ValueError("rng_seed must be non-negative")


@dataclass
class DrawingGraph:
    """Vertices are approximated primitives; edges are directed and stored in CSR order.

    Edge ``e`` goes from ``src[e]`` to ``dst[e]``; the edges leaving vertex ``i``
    occupy ``indptr[i]:indptr[i + 1]`` with ascending ``dst``. ``reverse[e]`` is
    the index of the opposite edge.
    """

    segments: np.ndarray  # N x 4 (px, py, qx, qy) mm
    kinds: np.ndarray  # N
    vertex_features: np.ndarray  # N x 7
    semantic: np.ndarray  # N
    instance: np.ndarray  # N
    bboxes: np.ndarray  # N x 4 true primitive extents
    src: np.ndarray  # E
    dst: np.ndarray  # E
    indptr: np.ndarray  # N + 1
    edge_features: np.ndarray  # E x 7
    reverse: np.ndarray  # E

    @property
    def num_vertices(self) -> int:
        return len(self.segments)

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @property
    def lengths(self) -> np.ndarray:
        return np.hypot(self.segments[:, 2] - self.segments[:, 0],
                        self.segments[:, 3] - self.segments[:, 1])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.dst[self.indptr[i]:self.indptr[i + 1]]

    def approx_segment(self, i: int) -> ApproxSegment:
        from .geometry import kind_from_index

        s = self.segments[i]
        return ApproxSegment((s[0], s[1]), (s[2], s[3]), kind_from_index(int(self.kinds[i])))


def _point_segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _cross(ox, oy, ax, ay, bx, by):
    return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)


def segment_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum distance between broadcast-compatible segment arrays ``(..., 4)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ax, ay, bx, by = (a[..., k] for k in range(4))
    cx, cy, dx, dy = (b[..., k] for k in range(4))
    d = np.minimum(
        np.minimum(_point_segment_distance(ax, ay, cx, cy, dx, dy),
                   _point_segment_distance(bx, by, cx, cy, dx, dy)),
        np.minimum(_point_segment_distance(cx, cy, ax, ay, bx, by),
                   _point_segment_distance(dx, dy, ax, ay, bx, by)),
    )
    # proper crossings; touching configurations already give 0 above
    o1 = _cross(ax, ay, bx, by, cx, cy)
    o2 = _cross(ax, ay, bx, by, dx, dy)
    o3 = _cross(cx, cy, dx, dy, ax, ay)
    o4 = _cross(cx, cy, dx, dy, bx, by)
    crossing = (o1 * o2 < 0) & (o3 * o4 < 0)
    return np.where(crossing, 0.0, d)


def segment_distance(a: ApproxSegment, b: ApproxSegment) -> float:
    return float(segment_distances(a.as_array(), b.as_array()))


def collinear_matrix(a: np.ndarray, b: np.ndarray, angle_tol_deg: float,
                     lateral_tol: float) -> np.ndarray:
    """``out[..]`` is true when segment b lies on the infinite line through segment a."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ddx = a[..., 2] - a[..., 0]
    ddy = a[..., 3] - a[..., 1]
    la = np.hypot(ddx, ddy)
    ang = acute_angle(line_angle(ddx, ddy), line_angle(b[..., 2] - b[..., 0], b[..., 3] - b[..., 1]))
    lat_p = np.abs(_cross(a[..., 0], a[..., 1], a[..., 2], a[..., 3], b[..., 0], b[..., 1])) / la
    lat_q = np.abs(_cross(a[..., 0], a[..., 1], a[..., 2], a[..., 3], b[..., 2], b[..., 3])) / la
    return (ang <= math.radians(angle_tol_deg)) & (lat_p <= lateral_tol) & (lat_q <= lateral_tol)


def collinear(a: ApproxSegment, b: ApproxSegment, cfg: GraphConfig = GraphConfig()) -> bool:
    return bool(collinear_matrix(a.as_array(), b.as_array(),
                                 cfg.collinear_angle_tol, cfg.collinear_lateral_tol))


def candidate_adjacency(segs: np.ndarray, cfg: GraphConfig) -> np.ndarray:
    """Symmetric boolean N x N matrix of uncapped candidate edges."""
    n = len(segs)
    adj = np.zeros((n, n), dtype=bool)
    for lo in range(0, n, _ROW_BLOCK):
        block = segs[lo:lo + _ROW_BLOCK, None, :]
        near = segment_distances(block, segs[None, :, :]) <= cfg.epsilon
        col = collinear_matrix(block, segs[None, :, :], cfg.collinear_angle_tol,
                               cfg.collinear_lateral_tol)
        adj[lo:lo + _ROW_BLOCK] = near | col
    # collinearity tests b against a's line, so it is not symmetric by itself
    adj |= adj.T
    np.fill_diagonal(adj, False)
    return adj


def cap_degrees(adj: np.ndarray, max_degree: int, seed: int) -> np.ndarray:
    """Randomly drop neighbours of vertices above the cap, then keep only mutual edges."""
    keep = adj.copy()
    for i in np.flatnonzero(adj.sum(axis=1) > max_degree):
        nbrs = np.flatnonzero(adj[i])
        rng = np.random.default_rng((seed, int(i)))
        chosen = rng.choice(len(nbrs), size=max_degree, replace=False)
        row = np.zeros(adj.shape[1], dtype=bool)
        row[nbrs[chosen]] = True
        keep[i] = row
    return keep & keep.T


def build_graph(primitives: Sequence[Primitive], cfg: GraphConfig = GraphConfig()) -> DrawingGraph:
    n = len(primitives)
    if n == 0:
        raise EmptyDrawing("drawing has no primitives")
    if n > cfg.max_vertices:
        raise TooManyVertices(n, cfg.max_vertices)

    approx = [approximate_segment(p) for p in primitives]
    segs = np.array([s.as_array() for s in approx])
    kinds = np.array([p.kind.index for p in primitives], dtype=np.int64)
    semantic = np.array([p.semantic for p in primitives], dtype=np.int64)
    instance = np.array([p.instance for p in primitives], dtype=np.int64)
    bboxes = np.array([bounding_box(p) for p in primitives], dtype=float)

    adj = cap_degrees(candidate_adjacency(segs, cfg), cfg.max_degree, cfg.rng_seed)
    return graph_from_adjacency(segs, kinds, semantic, instance, bboxes, adj, cfg.regularity)


def graph_from_adjacency(segs, kinds, semantic, instance, bboxes, adj: np.ndarray,
                         regularity: RegularityConfig = RegularityConfig()) -> DrawingGraph:
    """Assemble a :class:`DrawingGraph` from a symmetric boolean adjacency matrix."""
    segs = np.asarray(segs, dtype=float)
    if np.any((segs[:, 0] == segs[:, 2]) & (segs[:, 1] == segs[:, 3])):
        raise InvalidPrimitive("degenerate approximated segment")
    n = len(segs)
    src, dst = np.nonzero(adj)  # row-major: grouped by src, ascending dst
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
    reverse = _edge_lookup(src, dst, n, dst, src)
    isolated = int(np.sum(indptr[1:] == indptr[:-1]))
    if isolated:
        log.debug("graph has %d isolated vertices", isolated)
    return DrawingGraph(
        segments=segs,
        kinds=np.asarray(kinds, dtype=np.int64),
        vertex_features=vertex_features(segs, kinds),
        semantic=np.asarray(semantic, dtype=np.int64),
        instance=np.asarray(instance, dtype=np.int64),
        bboxes=np.asarray(bboxes, dtype=float),
        src=src.astype(np.int64),
        dst=dst.astype(np.int64),
        indptr=indptr,
        edge_features=edge_features(segs[src], segs[dst], regularity),
        reverse=reverse,
    )


def permute_graph(graph: DrawingGraph, perm: np.ndarray) -> DrawingGraph:
    """Graph whose vertex ``k`` is vertex ``perm[k]`` of ``graph``; edge features are reused."""
    perm = np.asarray(perm)
    n = graph.num_vertices
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    adj = np.zeros((n, n), dtype=bool)
    adj[inv[graph.src], inv[graph.dst]] = True
    g = graph_from_adjacency(graph.segments[perm], graph.kinds[perm], graph.semantic[perm],
                             graph.instance[perm], graph.bboxes[perm], adj)
    g.edge_features = graph.edge_features[
        _edge_lookup(graph.src, graph.dst, n, perm[g.src], perm[g.dst])]
    return g


def _edge_lookup(src, dst, n, qs, qd) -> np.ndarray:
    """Indices of edges ``(qs, qd)`` in a CSR-ordered edge list; all must exist."""
    keys = np.asarray(src, dtype=np.int64) * n + dst
    return np.searchsorted(keys, np.asarray(qs, dtype=np.int64) * n + qd).astype(np.int64)


def degree_histogram(graph: DrawingGraph) -> dict[int, int]:
    deg, count = np.unique(graph.degrees, return_counts=True)
    return {int(d): int(c) for d, c in zip(deg, count)}
