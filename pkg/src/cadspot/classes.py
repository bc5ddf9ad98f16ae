"""Semantic class tables (thing / stuff / background)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

THING = "thing"
STUFF = "stuff"
BACKGROUND = "background"


@dataclass(frozen=True)
class ClassInfo:
    id: int
    name: str
    kind: str  # thing | stuff | background


class ClassTable:
    """Dense class ids from 0 with exactly one background class."""

    def __init__(self, classes: Iterable[ClassInfo]):
        self.classes = list(classes)
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ValueError(f"class ids must be dense from 0, got {ids}")
        for c in self.classes:
            if c.kind not in (THING, STUFF, BACKGROUND):
                raise ValueError(f"class {c.name!r} has unknown kind {c.kind!r}")
        bg = [c.id for c in self.classes if c.kind == BACKGROUND]
        if len(bg) != 1:
            raise ValueError(f"exactly one background class required, found {len(bg)}")
        self.background = bg[0]

    def __len__(self) -> int:
        return len(self.classes)

    def __getitem__(self, i: int) -> ClassInfo:
        return self.classes[i]

    def __eq__(self, other) -> bool:
        return isinstance(other, ClassTable) and self.classes == other.classes

    def is_thing(self, c: int) -> bool:
        return 0 <= c < len(self.classes) and self.classes[c].kind == THING

    def is_stuff(self, c: int) -> bool:
        return 0 <= c < len(self.classes) and self.classes[c].kind == STUFF

    @property
    def thing_ids(self) -> list[int]:
        return [c.id for c in self.classes if c.kind == THING]

    @property
    def stuff_ids(self) -> list[int]:
        return [c.id for c in self.classes if c.kind == STUFF]

    def name(self, c: int) -> str:
        return self.classes[c].name

    def to_json(self) -> list[dict]:
        return [{"id": c.id, "name": c.name, "kind": c.kind} for c in self.classes]

    @classmethod
    def from_json(cls, rows: list[dict]) -> "ClassTable":
        return cls(ClassInfo(int(r["id"]), str(r["name"]), str(r["kind"])) for r in rows)

    @classmethod
    def from_names(cls, things: list[str], stuff: list[str], background: str = "background"):
        rows = [(n, THING) for n in things] + [(n, STUFF) for n in stuff] + [(background, BACKGROUND)]
        return cls(ClassInfo(i, n, k) for i, (n, k) in enumerate(rows))


FLOORPLAN_THINGS = [
    "single door", "double door", "sliding door", "folding door", "revolving door",
    "shutter door", "window", "bay window", "shutter window", "opening symbol", "sofa",
    "bed", "chair", "table", "TV cabinet", "wardrobe", "cabinet", "gas stove", "sink",
    "refrigerator", "air conditioning", "bath", "bathtub", "washing machine", "urinal",
    "squat toilet", "toilet", "stairs", "elevator", "escalator",
]
FLOORPLAN_STUFF = ["row seat", "parking", "wall", "curtain wall", "handrail"]


def floorplan_classes() -> ClassTable:
    """30 things, 5 stuff classes and background (36 ids)."""
    return ClassTable.from_names(FLOORPLAN_THINGS, FLOORPLAN_STUFF)


def synthetic_classes() -> ClassTable:
    return ClassTable.from_names(["door", "window", "table"], ["wall"])
