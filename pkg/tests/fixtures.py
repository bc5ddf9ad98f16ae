"""Small random drawings and graphs shared by several test modules."""

import numpy as np

from cadspot.classes import ClassTable
from cadspot.geometry import Primitive, Segment
from cadspot.graph import GraphConfig, build_graph


def random_segments(rng, n, extent=3000.0, max_len=1500.0):
    p = rng.uniform(0, extent, (n, 2))
    ang = rng.uniform(0, 2 * np.pi, n)
    ln = rng.uniform(10, max_len, n)
    q = p + np.stack([np.cos(ang), np.sin(ang)], 1) * ln[:, None]
    return [(tuple(a), tuple(b)) for a, b in zip(p, q)]


def class_table(num_classes=4):
    """All thing classes except one stuff class and the background, which come last."""
    things = [f"thing{i}" for i in range(num_classes - 2)]
    return ClassTable.from_names(things, ["stuff"])


def random_graph(rng, n, num_classes=4, extent=1200.0, max_degree=30):
    """Random segments labelled against :func:`class_table`."""
    prims = []
    for p, q in random_segments(rng, n, extent=extent, max_len=600.0):
        c = int(rng.integers(0, num_classes))
        inst = int(rng.integers(0, 3)) if c < num_classes - 2 else -1
        prims.append(Primitive(Segment(p, q), c, inst))
    return build_graph(prims, GraphConfig(max_degree=max_degree))
