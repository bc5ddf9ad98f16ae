"""SVG 1.1 rendering of drawings and panoptic predictions."""

from __future__ import annotations

import colorsys
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

from ..classes import ClassTable
from ..extract import PanopticPrediction
from ..geometry import Arc, Circle, Ellipse, Segment
from .records import DrawingRecord

CANVAS = "#eeeeee"
BACKGROUND_STROKE = "#9a9a9a"


def palette(n: int) -> list[str]:
    """``n`` well-separated colours (golden-ratio hue walk)."""
    out = []
    for i in range(n):
        h = (i * 0.618033988749895) % 1.0
        r, g, b = colorsys.hsv_to_rgb(h, 0.75, 0.85)
        out.append(f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}")
    return out


@dataclass(frozen=True)
class RenderOptions:
    stroke_width: float = 20.0
    show_instances: bool = True
    font_size: float = 160.0
    use_predicted_classes: bool = True


def _f(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def _path(g, flip) -> str:
    if isinstance(g, Segment):
        (x0, y0), (x1, y1) = flip(g.p), flip(g.q)
        return f"M{_f(x0)} {_f(y0)}L{_f(x1)} {_f(y1)}"
    if isinstance(g, Arc):
        (x0, y0), (x1, y1) = flip(g.point_at(g.start)), flip(g.point_at(g.end))
        large = 1 if g.sweep > math.pi else 0
        # counter-clockwise in world coordinates is clockwise on screen (sweep flag 0)
        return f"M{_f(x0)} {_f(y0)}A{_f(g.radius)} {_f(g.radius)} 0 {large} 0 {_f(x1)} {_f(y1)}"
    if isinstance(g, Circle):
        rx = ry = g.radius
        rot = 0.0
    else:
        rx, ry, rot = g.rx, g.ry, g.rotation
    cx, cy = g.center
    c, s = math.cos(rot), math.sin(rot)
    (ax, ay), (bx, by) = flip((cx + rx * c, cy + rx * s)), flip((cx - rx * c, cy - rx * s))
    deg = _f(-math.degrees(rot))
    return (f"M{_f(ax)} {_f(ay)}A{_f(rx)} {_f(ry)} {deg} 1 0 {_f(bx)} {_f(by)}"
            f"A{_f(rx)} {_f(ry)} {deg} 1 0 {_f(ax)} {_f(ay)}Z")


def render_svg(record: DrawingRecord, classes: ClassTable, prediction: PanopticPrediction | None = None,
               options: RenderOptions = RenderOptions()) -> str:
    """One ``path`` per primitive coloured by class; optional instance boxes.

    With a prediction, primitives take the predicted class (unless
    ``use_predicted_classes`` is off) and each thing instance gets a
    translucent rectangle labelled with its class and confidence.
    """
    w, h = record.block_extent
    flip = lambda p: (float(p[0]), h - float(p[1]))
    colors = palette(len(classes))
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{_f(w / 10)}" height="{_f(h / 10)}" viewBox="0 0 {_f(w)} {_f(h)}">',
        f'<rect x="0" y="0" width="{_f(w)}" height="{_f(h)}" fill="{CANVAS}"/>',
        f'<g fill="none" stroke-width="{_f(options.stroke_width)}" stroke-linecap="round">',
    ]
    for i, p in enumerate(record.primitives):
        c = p.semantic
        if prediction is not None and options.use_predicted_classes:
            c = int(prediction.vertex_classes[i])
        stroke = BACKGROUND_STROKE if c == classes.background else colors[c]
        out.append(f'<path d="{_path(p.geometry, flip)}" stroke="{stroke}" data-class="{c}"/>')
    out.append("</g>")
    if prediction is not None and options.show_instances:
        out.append('<g class="instances">')
        for s in prediction.instances:
            x0, y0, x1, y1 = s.bbox
            col = colors[s.label]
            label = escape(f"{classes.name(s.label)} {s.confidence:.2f}")
            out.append(f'<rect x="{_f(x0)}" y="{_f(h - y1)}" width="{_f(x1 - x0)}" '
                       f'height="{_f(y1 - y0)}" fill="{col}" fill-opacity="0.15" stroke="{col}" '
                       f'stroke-width="{_f(options.stroke_width / 2)}"/>')
            out.append(f'<text x="{_f(x0)}" y="{_f(h - y1 - options.font_size / 4)}" '
                       f'font-size="{_f(options.font_size)}" fill="{col}">{label}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
