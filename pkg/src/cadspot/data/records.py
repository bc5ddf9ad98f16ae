"""Drawing records and dataset manifests on disk.

A record is one JSON document::

    {"schema": "cadspot-record", "version": 1, "id": "...",
     "block_extent": [10000.0, 10000.0],
     "primitives": [{"kind": "segment", "p": [x, y], "q": [x, y],
                     "semantic": 3, "instance": -1}, ...]}

Arc angles (``start``, ``end``) and ellipse ``rotation`` are radians. Floats
are written with ``repr`` precision, so a save/load round trip is exact.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

from ..classes import ClassTable
from ..errors import InvalidPrimitive, ParseError, VersionMismatch
from ..extract import PanopticPrediction
from ..geometry import Arc, Circle, Ellipse, Primitive, Segment, bounding_box

log = logging.getLogger(__name__)

RECORD_SCHEMA = "cadspot-record"
MANIFEST_SCHEMA = "cadspot-manifest"
PREDICTION_SCHEMA = "cadspot-prediction"
FORMAT_VERSION = 1
BLOCK_SIZE = 10000.0


@dataclass
class DrawingRecord:
    id: str
    primitives: list[Primitive] = field(default_factory=list)
    block_extent: tuple[float, float] = (BLOCK_SIZE, BLOCK_SIZE)

    def out_of_extent(self) -> list[int]:
        w, h = self.block_extent
        bad = []
        for i, p in enumerate(self.primitives):
            x0, y0, x1, y1 = bounding_box(p)
            if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
                bad.append(i)
        return bad


@dataclass
class DatasetManifest:
    split: str
    records: list[str]  # paths relative to the manifest file
    classes: ClassTable
    root: Path = Path(".")

    def record_paths(self) -> list[Path]:
        return [self.root / r for r in self.records]

    def load_records(self) -> list[DrawingRecord]:
        return [load_record(p, self.classes) for p in self.record_paths()]


class RecordConverter(Protocol):
    """Adapter from an external dataset's records to native records."""

    def __call__(self, record: DrawingRecord) -> DrawingRecord: ...


def identity_converter(record: DrawingRecord) -> DrawingRecord:
    return record


# ---------------------------------------------------------------- primitives

def _pt(v) -> list[float]:
    return [float(v[0]), float(v[1])]


def primitive_to_json(p: Primitive) -> dict:
    g = p.geometry
    if isinstance(g, Segment):
        d = {"kind": "segment", "p": _pt(g.p), "q": _pt(g.q)}
    elif isinstance(g, Arc):
        d = {"kind": "arc", "center": _pt(g.center), "radius": float(g.radius),
             "start": float(g.start), "end": float(g.end)}
    elif isinstance(g, Circle):
        d = {"kind": "circle", "center": _pt(g.center), "radius": float(g.radius)}
    else:
        d = {"kind": "ellipse", "center": _pt(g.center), "rx": float(g.rx), "ry": float(g.ry),
             "rotation": float(g.rotation)}
    d["semantic"] = int(p.semantic)
    d["instance"] = int(p.instance)
    return d


def _num(d: dict, key: str, where: str) -> float:
    if key not in d:
        raise ParseError(f"missing field {key!r}", where)
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ParseError(f"field {key!r} must be a finite number, got {v!r}", where)
    return float(v)


def _point(d: dict, key: str, where: str) -> tuple[float, float]:
    v = d.get(key)
    if not isinstance(v, list) or len(v) != 2:
        raise ParseError(f"field {key!r} must be a 2-element list", where)
    return (_num({"x": v[0]}, "x", f"{where}.{key}[0]"), _num({"y": v[1]}, "y", f"{where}.{key}[1]"))


def _int(d: dict, key: str, where: str) -> int:
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"field {key!r} must be an integer, got {v!r}", where)
    return v


def primitive_from_json(d: dict, where: str, classes: ClassTable | None = None) -> Primitive:
    if not isinstance(d, dict):
        raise ParseError("primitive must be an object", where)
    kind = d.get("kind")
    try:
        if kind == "segment":
            g = Segment(_point(d, "p", where), _point(d, "q", where))
        elif kind == "arc":
            g = Arc(_point(d, "center", where), _num(d, "radius", where),
                    _num(d, "start", where), _num(d, "end", where))
        elif kind == "circle":
            g = Circle(_point(d, "center", where), _num(d, "radius", where))
        elif kind == "ellipse":
            g = Ellipse(_point(d, "center", where), _num(d, "rx", where), _num(d, "ry", where),
                        _num(d, "rotation", where) if "rotation" in d else 0.0)
        else:
            raise ParseError(f"unknown kind {kind!r}", f"{where}.kind")
    except InvalidPrimitive as exc:
        raise ParseError(str(exc), where) from exc

    if "semantic" not in d:
        raise ParseError("missing field 'semantic'", where)
    semantic = _int(d, "semantic", where)
    if classes is not None and not 0 <= semantic < len(classes):
        raise ParseError(f"semantic label {semantic} outside the class table", f"{where}.semantic")
    thing = classes.is_thing(semantic) if classes is not None else None
    if "instance" in d:
        instance = _int(d, "instance", where)
    elif thing:
        raise ParseError("thing primitive is missing 'instance'", f"{where}.instance")
    else:
        instance = -1
    if thing is False and instance >= 0:
        raise ParseError("only thing primitives carry an instance id", f"{where}.instance")
    return Primitive(g, semantic, instance)


# ---------------------------------------------------------------- records

def record_to_json(rec: DrawingRecord) -> dict:
    return {
        "schema": RECORD_SCHEMA,
        "version": FORMAT_VERSION,
        "id": rec.id,
        "block_extent": [float(rec.block_extent[0]), float(rec.block_extent[1])],
        "primitives": [primitive_to_json(p) for p in rec.primitives],
    }


def record_from_json(doc: dict, classes: ClassTable | None = None,
                     source: str = "record") -> DrawingRecord:
    if not isinstance(doc, dict) or doc.get("schema") != RECORD_SCHEMA:
        raise ParseError(f"not a {RECORD_SCHEMA} document", source)
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{source}: record version {doc.get('version')} != {FORMAT_VERSION}")
    prims = doc.get("primitives")
    if not isinstance(prims, list):
        raise ParseError("field 'primitives' must be a list", source)
    ext = doc.get("block_extent", [BLOCK_SIZE, BLOCK_SIZE])
    rec = DrawingRecord(
        id=str(doc.get("id", "")),
        primitives=[primitive_from_json(p, f"{source}: primitives[{i}]", classes)
                    for i, p in enumerate(prims)],
        block_extent=(float(ext[0]), float(ext[1])),
    )
    bad = rec.out_of_extent()
    if bad:
        log.warning("%s: %d primitives extend outside the block extent", source, len(bad))
    return rec


def save_record(rec: DrawingRecord, path: str | Path):
    Path(path).write_text(json.dumps(record_to_json(rec), indent=1) + "\n")


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"{path}:{exc.lineno}:{exc.colno}") from exc


def load_record(path: str | Path, classes: ClassTable | None = None) -> DrawingRecord:
    return record_from_json(_read_json(Path(path)), classes, str(path))


# ---------------------------------------------------------------- manifests

def save_manifest(man: DatasetManifest, path: str | Path):
    doc = {"schema": MANIFEST_SCHEMA, "version": FORMAT_VERSION, "split": man.split,
           "records": list(man.records), "classes": man.classes.to_json()}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_manifest(path: str | Path) -> DatasetManifest:
    path = Path(path)
    doc = _read_json(path)
    if not isinstance(doc, dict) or doc.get("schema") != MANIFEST_SCHEMA:
        raise ParseError(f"not a {MANIFEST_SCHEMA} document", str(path))
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: manifest version {doc.get('version')} != {FORMAT_VERSION}")
    try:
        classes = ClassTable.from_json(doc["classes"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"bad class table: {exc}", f"{path}: classes") from exc
    return DatasetManifest(str(doc.get("split", "")), [str(r) for r in doc.get("records", [])],
                           classes, path.parent)


# ---------------------------------------------------------------- tiling

def tile_record(rec: DrawingRecord, block: float = BLOCK_SIZE) -> list[tuple[DrawingRecord, list[int]]]:
    """Split a record into ``block x block`` tiles by primitive bounding-box centre.

    Returns each tile with the original indices of its primitives; primitives
    keep their absolute coordinates.
    """
    tiles: dict[tuple[int, int], list[int]] = {}
    for i, p in enumerate(rec.primitives):
        x0, y0, x1, y1 = bounding_box(p)
        key = (int(math.floor((x0 + x1) / 2 / block)), int(math.floor((y0 + y1) / 2 / block)))
        tiles.setdefault(key, []).append(i)
    out = []
    for (tx, ty), idx in sorted(tiles.items()):
        sub = DrawingRecord(f"{rec.id}@{tx},{ty}", [rec.primitives[i] for i in idx], (block, block))
        out.append((sub, idx))
    return out


def records_equal(a: DrawingRecord, b: DrawingRecord) -> bool:
    return record_to_json(a) == record_to_json(b)


def relabel(rec: DrawingRecord, primitives: Sequence[Primitive]) -> DrawingRecord:
    return DrawingRecord(rec.id, list(primitives), rec.block_extent)


# ---------------------------------------------------------------- predictions

def save_prediction(pred: PanopticPrediction, path: str | Path, record_id: str = ""):
    doc = {"schema": PREDICTION_SCHEMA, "version": FORMAT_VERSION, "record": record_id}
    doc.update(pred.to_json())
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_prediction(path: str | Path) -> PanopticPrediction:
    doc = _read_json(Path(path))
    if not isinstance(doc, dict) or doc.get("schema") != PREDICTION_SCHEMA:
        raise ParseError(f"not a {PREDICTION_SCHEMA} document", str(path))
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: prediction version {doc.get('version')} != {FORMAT_VERSION}")
    try:
        return PanopticPrediction.from_json(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad prediction: {exc}", str(path)) from exc
