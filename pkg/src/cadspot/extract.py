"""From per-vertex class probabilities and per-edge adjacency to symbol instances."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classes import ClassTable
from .graph import DrawingGraph


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


@dataclass
class SymbolInstance:
    label: int
    members: tuple[int, ...]
    confidence: float = 1.0
    bbox: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.members:
            raise ValueError("a symbol needs at least one member")
        self.members = tuple(sorted(int(m) for m in self.members))

    def to_json(self) -> dict:
        return {"class": self.label, "members": list(self.members),
                "confidence": self.confidence, "bbox": list(self.bbox)}

    @classmethod
    def from_json(cls, d: dict) -> "SymbolInstance":
        return cls(int(d["class"]), tuple(d["members"]), float(d.get("confidence", 1.0)),
                   tuple(float(x) for x in d.get("bbox", (0, 0, 0, 0))))


@dataclass
class PanopticPrediction:
    vertex_classes: np.ndarray
    instances: list[SymbolInstance] = field(default_factory=list)
    stuff: list[SymbolInstance] = field(default_factory=list)

    @property
    def symbols(self) -> list[SymbolInstance]:
        return self.instances + self.stuff

    def to_json(self) -> dict:
        return {"vertex_classes": [int(c) for c in self.vertex_classes],
                "instances": [s.to_json() for s in self.instances],
                "stuff": [s.to_json() for s in self.stuff]}

    @classmethod
    def from_json(cls, d: dict) -> "PanopticPrediction":
        return cls(np.asarray(d["vertex_classes"], dtype=np.int64),
                   [SymbolInstance.from_json(s) for s in d.get("instances", [])],
                   [SymbolInstance.from_json(s) for s in d.get("stuff", [])])


def members_bbox(graph: DrawingGraph, members) -> tuple[float, float, float, float]:
    b = graph.bboxes[list(members)]
    return (float(b[:, 0].min()), float(b[:, 1].min()), float(b[:, 2].max()), float(b[:, 3].max()))


def symmetrize(z: np.ndarray, graph: DrawingGraph) -> np.ndarray:
    """``(Z_ij + Z_ji) / 2`` on every directed edge."""
    z = np.asarray(z, dtype=float)
    return (z + z[graph.reverse]) / 2.0


def extract(y: np.ndarray, z: np.ndarray, graph: DrawingGraph, classes: ClassTable,
            prune_threshold: float = 0.7) -> PanopticPrediction:
    """Group vertices by predicted class, then take connected components of pruned edges.

    ``y`` is either ``N x C`` class scores or a length-``N`` vector of class
    ids; ``z`` holds one adjacency probability per directed edge.
    """
    y = np.asarray(y)
    labels = y.argmax(axis=1) if y.ndim == 2 else y.astype(np.int64)
    n = graph.num_vertices
    zbar = symmetrize(z, graph)
    thing = np.array([classes.is_thing(int(c)) for c in labels], dtype=bool)

    upper = graph.src < graph.dst
    keep = (upper & (zbar > prune_threshold) & thing[graph.src]
            & (labels[graph.src] == labels[graph.dst]))
    uf = UnionFind(n)
    for i, j in zip(graph.src[keep], graph.dst[keep]):
        uf.union(int(i), int(j))

    groups: dict[int, list[int]] = {}
    for v in np.flatnonzero(thing):
        groups.setdefault(uf.find(int(v)), []).append(int(v))
    conf_sum: dict[int, float] = {}
    conf_cnt: dict[int, int] = {}
    for i, zz in zip(graph.src[keep], zbar[keep]):
        r = uf.find(int(i))
        conf_sum[r] = conf_sum.get(r, 0.0) + float(zz)
        conf_cnt[r] = conf_cnt.get(r, 0) + 1

    instances = []
    for root, members in sorted(groups.items(), key=lambda kv: kv[1][0]):
        conf = conf_sum[root] / conf_cnt[root] if root in conf_cnt else 1.0
        instances.append(SymbolInstance(int(labels[members[0]]), tuple(members), conf,
                                        members_bbox(graph, members)))
    stuff = []
    for c in classes.stuff_ids:
        members = np.flatnonzero(labels == c)
        if len(members):
            stuff.append(SymbolInstance(c, tuple(members), 1.0, members_bbox(graph, members)))
    return PanopticPrediction(labels, instances, stuff)


def ground_truth(graph: DrawingGraph, classes: ClassTable) -> PanopticPrediction:
    """Ground-truth symbols: thing instances by (class, instance id), one region per stuff class."""
    instances = []
    by_key: dict[tuple[int, int], list[int]] = {}
    for v, (c, inst) in enumerate(zip(graph.semantic, graph.instance)):
        if classes.is_thing(int(c)) and inst >= 0:
            by_key.setdefault((int(c), int(inst)), []).append(v)
        elif classes.is_thing(int(c)):
            by_key.setdefault((int(c), -1 - v), []).append(v)
    for (c, _), members in sorted(by_key.items(), key=lambda kv: kv[1][0]):
        instances.append(SymbolInstance(c, tuple(members), 1.0, members_bbox(graph, members)))
    stuff = []
    for c in classes.stuff_ids:
        members = np.flatnonzero(graph.semantic == c)
        if len(members):
            stuff.append(SymbolInstance(c, tuple(members), 1.0, members_bbox(graph, members)))
    return PanopticPrediction(graph.semantic.copy(), instances, stuff)


def gt_adjacency(graph: DrawingGraph, classes: ClassTable) -> np.ndarray:
    """1 on directed edges joining two thing vertices of the same instance, else 0."""
    thing = np.array([classes.is_thing(int(c)) for c in graph.semantic], dtype=bool)
    s, d = graph.src, graph.dst
    same = ((graph.semantic[s] == graph.semantic[d]) & (graph.instance[s] == graph.instance[d])
            & (graph.instance[s] >= 0) & thing[s] & thing[d])
    return same.astype(float)
