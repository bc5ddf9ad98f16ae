"""Procedural labelled floor plans for desk-scale training and tests.

A drawing is a 2 x 2 grid of rooms bounded by double-line walls. Each wall
run may carry one opening (a door, or on the outer shell possibly a window),
rooms receive at most one furniture symbol, and unlabelled clutter (dimension
lines with ticks, ellipses) is scattered around. Labels come from
construction, so every thing instance is a connected cluster of primitives.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..classes import ClassTable
from ..geometry import Arc, Circle, Ellipse, Primitive, Segment
from .records import BLOCK_SIZE, DatasetManifest, DrawingRecord, save_manifest, save_record

OPENINGS = ("door", "window")
FURNITURE = ("table", "sink", "bathtub")
TEMPLATES = OPENINGS + FURNITURE


@dataclass(frozen=True)
class SyntheticSpec:
    """Template set and placement probabilities.

    Each of the 12 wall runs gets an opening with ``p_opening``. Openings on
    the 8 outer runs are windows with ``p_window`` (when windows are enabled),
    otherwise doors; inner runs only take doors. Each of the 4 rooms gets a
    furniture symbol with ``p_furniture``, drawn uniformly from the enabled
    furniture templates.
    """

    templates: tuple[str, ...] = ("door", "window", "table")
    wall_thickness: float = 200.0
    p_opening: float = 0.35
    p_window: float = 0.5
    p_furniture: float = 0.6
    clutter: tuple[int, int] = (1, 3)  # dimension lines per drawing, inclusive range
    ellipses: tuple[int, int] = (1, 2)

    def __post_init__(self):
        unknown = set(self.templates) - set(TEMPLATES)
        if unknown:
            raise ValueError(f"unknown templates {sorted(unknown)}; choose from {TEMPLATES}")
        if "door" not in self.templates:
            raise ValueError("the door template is required (inner wall openings)")
        if len(set(self.templates)) != len(self.templates):
            raise ValueError("duplicate templates")

    @property
    def furniture(self) -> tuple[str, ...]:
        return tuple(t for t in self.templates if t in FURNITURE)

    def class_table(self) -> ClassTable:
        return ClassTable.from_names(list(self.templates), ["wall"])

    def expected_counts(self) -> dict[str, float]:
        """Expected number of instances of each template per drawing."""
        win = self.p_window if "window" in self.templates else 0.0
        out = {"door": self.p_opening * (8 * (1 - win) + 4)}
        if "window" in self.templates:
            out["window"] = self.p_opening * 8 * win
        for f in self.furniture:
            out[f] = 4 * self.p_furniture / len(self.furniture)
        return out

    def to_json(self) -> dict:
        d = asdict(self)
        d["templates"] = list(self.templates)
        d["clutter"] = list(self.clutter)
        d["ellipses"] = list(self.ellipses)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        for k in ("templates", "clutter", "ellipses"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


class _Frame:
    """Local (along, across) coordinates of a wall run."""

    def __init__(self, origin, u, n):
        self.o = np.asarray(origin, float)
        self.u = np.asarray(u, float)
        self.n = np.asarray(n, float)

    def pt(self, s, r) -> tuple[float, float]:
        p = self.o + s * self.u + r * self.n
        return (float(p[0]), float(p[1]))


class _Builder:
    def __init__(self, classes: ClassTable):
        self.classes = classes
        self.ids = {c.name: c.id for c in classes.classes}
        self.prims: list[Primitive] = []
        self.next_instance = 0

    def new_instance(self) -> int:
        self.next_instance += 1
        return self.next_instance - 1

    def seg(self, p, q, label: str, inst: int = -1):
        self.prims.append(Primitive(Segment(p, q), self.ids[label], inst))

    def add(self, geom, label: str, inst: int = -1):
        self.prims.append(Primitive(geom, self.ids[label], inst))


def _ccw_quarter(center, u, n, radius) -> Arc:
    a = math.atan2(u[1], u[0])
    b = math.atan2(n[1], n[0])
    if (b - a) % (2 * math.pi) < math.pi:
        return Arc(center, radius, a % (2 * math.pi), b % (2 * math.pi))
    return Arc(center, radius, b % (2 * math.pi), a % (2 * math.pi))


def _door(b: _Builder, f: _Frame, a: float, w: float, t: float, rng):
    inst = b.new_instance()
    side = 1.0 if rng.random() < 0.5 else -1.0
    hinge_s, free_s = (a, a + w) if rng.random() < 0.5 else (a + w, a)
    face = side * t / 2
    hinge = f.pt(hinge_s, face)
    b.seg(hinge, f.pt(free_s, face), "door", inst)           # threshold
    b.seg(hinge, f.pt(hinge_s, face + side * w), "door", inst)  # open leaf
    along = f.u * np.sign(free_s - hinge_s)
    b.add(_ccw_quarter(hinge, along, f.n * side, w), "door", inst)


def _window(b: _Builder, f: _Frame, a: float, w: float, t: float):
    inst = b.new_instance()
    for r in (-t / 2, -t / 6, t / 6, t / 2):
        b.seg(f.pt(a, r), f.pt(a + w, r), "window", inst)


def _rect(b: _Builder, x0, y0, x1, y1, label, inst):
    c = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
    for k in range(4):
        b.seg(c[k], c[(k + 1) % 4], label, inst)


def _furniture(b: _Builder, kind: str, room, rng):
    rx0, ry0, rx1, ry1 = room
    if kind == "table":
        w, h = rng.uniform(800, 1600), rng.uniform(600, 900)
    elif kind == "sink":
        w, h = rng.uniform(450, 600), rng.uniform(350, 500)
    else:
        w, h = rng.uniform(1500, 1800), rng.uniform(700, 800)
    if rng.random() < 0.5:
        w, h = h, w
    margin = 500.0
    x0 = rng.uniform(rx0 + margin, rx1 - margin - w)
    y0 = rng.uniform(ry0 + margin, ry1 - margin - h)
    x1, y1 = x0 + w, y0 + h
    inst = b.new_instance()
    _rect(b, x0, y0, x1, y1, kind, inst)
    if kind == "table":
        r = rng.uniform(25, 40)
        inset = 60 + r
        for cx, cy in ((x0 + inset, y0 + inset), (x1 - inset, y0 + inset),
                       (x1 - inset, y1 - inset), (x0 + inset, y1 - inset)):
            b.add(Circle((cx, cy), r), kind, inst)
    elif kind == "sink":
        b.add(Circle(((x0 + x1) / 2, (y0 + y1) / 2), 0.3 * min(w, h)), kind, inst)
    else:
        rot = 0.0 if w >= h else math.pi / 2
        b.add(Ellipse(((x0 + x1) / 2, (y0 + y1) / 2), max(w, h) / 2 - 150, min(w, h) / 2 - 120, rot),
              kind, inst)
    return (x0, y0, x1, y1)


def _dimension_line(b: _Builder, p, q, n, tick=150.0):
    b.seg(p, q, "background")
    for end in (p, q):
        b.seg((end[0] - n[0] * tick, end[1] - n[1] * tick), (end[0] + n[0] * tick, end[1] + n[1] * tick),
              "background")


def synthesize_record(rng: np.random.Generator, spec: SyntheticSpec, rid: str) -> DrawingRecord:
    classes = spec.class_table()
    b = _Builder(classes)
    t = spec.wall_thickness
    x0, x1 = rng.uniform(1200, 1600), rng.uniform(8400, 8800)
    y0, y1 = rng.uniform(1200, 1600), rng.uniform(8400, 8800)
    xm = x0 + (x1 - x0) * rng.uniform(0.4, 0.6)
    ym = y0 + (y1 - y0) * rng.uniform(0.4, 0.6)

    # wall runs: (start, end, outer?)
    runs = []
    for y, outer in ((y0, True), (ym, False), (y1, True)):
        runs += [((x0, y), (xm, y), outer), ((xm, y), (x1, y), outer)]
    for x, outer in ((x0, True), (xm, False), (x1, True)):
        runs += [((x, y0), (x, ym), outer), ((x, ym), (x, y1), outer)]

    windows = "window" in spec.templates
    for p, q, outer in runs:
        length = math.dist(p, q)
        u = ((q[0] - p[0]) / length, (q[1] - p[1]) / length)
        f = _Frame(p, u, (-u[1], u[0]))
        opening = None
        if rng.random() < spec.p_opening:
            kind = "window" if outer and windows and rng.random() < spec.p_window else "door"
            w = rng.uniform(1000, 1600) if kind == "window" else rng.uniform(800, 1000)
            a = rng.uniform(t + 300, length - t - 300 - w)
            opening = (kind, a, w)
        pieces = [(0.0, length)] if opening is None else [(0.0, opening[1]), (opening[1] + opening[2], length)]
        for s0, s1 in pieces:
            for r in (-t / 2, t / 2):
                b.seg(f.pt(s0, r), f.pt(s1, r), "wall")
        if opening is not None:
            kind, a, w = opening
            for s in (a, a + w):
                b.seg(f.pt(s, -t / 2), f.pt(s, t / 2), "wall")
            if kind == "door":
                _door(b, f, a, w, t, rng)
            else:
                _window(b, f, a, w, t)

    rooms = [(x0, y0, xm, ym), (xm, y0, x1, ym), (x0, ym, xm, y1), (xm, ym, x1, y1)]
    placed = []
    for room in rooms:
        if spec.furniture and rng.random() < spec.p_furniture:
            kind = spec.furniture[rng.integers(len(spec.furniture))]
            placed.append(_furniture(b, kind, room, rng))
        else:
            placed.append(None)

    # clutter: dimension lines outside the shell, ellipses in free room corners
    for _ in range(rng.integers(spec.clutter[0], spec.clutter[1] + 1)):
        side = rng.integers(4)
        off = rng.uniform(500, 900)
        s0 = rng.uniform(0.0, 0.4)
        s1 = rng.uniform(0.6, 1.0)
        if side < 2:
            y = y0 - off if side == 0 else y1 + off
            _dimension_line(b, (x0 + s0 * (x1 - x0), y), (x0 + s1 * (x1 - x0), y), (0.0, 1.0))
        else:
            x = x0 - off if side == 2 else x1 + off
            _dimension_line(b, (x, y0 + s0 * (y1 - y0)), (x, y0 + s1 * (y1 - y0)), (1.0, 0.0))
    for _ in range(rng.integers(spec.ellipses[0], spec.ellipses[1] + 1)):
        k = rng.integers(4)
        rx0, ry0, rx1, ry1 = rooms[k]
        # keep clear of furniture: use the room corner farthest from it
        cx = rx0 + 450 if rng.random() < 0.5 else rx1 - 450
        cy = ry0 + 450 if rng.random() < 0.5 else ry1 - 450
        if placed[k] is not None:
            fx = (placed[k][0] + placed[k][2]) / 2
            fy = (placed[k][1] + placed[k][3]) / 2
            cx = rx0 + 450 if fx > (rx0 + rx1) / 2 else rx1 - 450
            cy = ry0 + 450 if fy > (ry0 + ry1) / 2 else ry1 - 450
        b.add(Ellipse((cx, cy), rng.uniform(120, 200), rng.uniform(50, 100), rng.uniform(0, math.pi)),
              "background")
    return DrawingRecord(rid, b.prims, (BLOCK_SIZE, BLOCK_SIZE))


def synthesize_records(seed: int, n: int, spec: SyntheticSpec = SyntheticSpec()) -> list[DrawingRecord]:
    """``n`` drawings; drawing ``i`` depends only on ``(seed, i)``."""
    return [synthesize_record(np.random.default_rng((seed, i)), spec, f"synth-{seed}-{i:04d}")
            for i in range(n)]


def generate_synthetic(seed: int, n: int, spec: SyntheticSpec = SyntheticSpec(),
                       out_dir: str | Path | None = None, split: str = "train") -> DatasetManifest:
    """Generate ``n`` drawings and, when ``out_dir`` is given, write them with a manifest."""
    records = synthesize_records(seed, n, spec)
    names = [f"{r.id}.json" for r in records]
    root = Path(out_dir) if out_dir is not None else Path(".")
    man = DatasetManifest(split, names, spec.class_table(), root)
    if out_dir is not None:
        root.mkdir(parents=True, exist_ok=True)
        for r, name in zip(records, names):
            save_record(r, root / name)
        save_manifest(man, root / "manifest.json")
    return man


def tiny_record(seed: int = 0) -> DrawingRecord:
    """Twelve primitives: a wall run with a door opening plus a dimension line.

    Small enough for exhaustive finite-difference checks.
    """
    rng = np.random.default_rng((seed, 12))
    spec = SyntheticSpec()
    b = _Builder(spec.class_table())
    t = spec.wall_thickness
    length = rng.uniform(2400, 3000)
    y = rng.uniform(1500, 2500)
    f = _Frame((1000.0, y), (1.0, 0.0), (0.0, 1.0))
    w = rng.uniform(800, 1000)
    a = rng.uniform(t + 300, length - t - 300 - w)
    for s0, s1 in ((0.0, a), (a + w, length)):
        for r in (-t / 2, t / 2):
            b.seg(f.pt(s0, r), f.pt(s1, r), "wall")
    for s in (a, a + w):
        b.seg(f.pt(s, -t / 2), f.pt(s, t / 2), "wall")
    _door(b, f, a, w, t, rng)
    _dimension_line(b, (1000.0, y - 700), (1000.0 + length, y - 700), (0.0, 1.0))
    return DrawingRecord(f"tiny-{seed}", b.prims, (BLOCK_SIZE, BLOCK_SIZE))
