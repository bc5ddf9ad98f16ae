"""Evaluation: length-weighted symbol IoU, panoptic quality, semantic F1, box AP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .classes import ClassTable
from .errors import OverlappingInstances
from .extract import SymbolInstance

IOU_MATCH = 0.5


def symbol_iou(a: SymbolInstance, b: SymbolInstance, lengths: np.ndarray) -> float:
    """Length-weighted IoU of two member sets; 0 when classes differ.

    Sums are correctly rounded (``math.fsum``), so the value does not depend
    on member order.
    """
    if a.label != b.label:
        return 0.0
    sa, sb = set(a.members), set(b.members)
    inter = math.fsum(float(lengths[i]) for i in sa & sb)
    union = math.fsum(float(lengths[i]) for i in sa | sb)
    return inter / union if union > 0 else 0.0


def check_partition(symbols: Sequence[SymbolInstance], what: str = "symbols"):
    seen: set[int] = set()
    for s in symbols:
        dup = seen.intersection(s.members)
        if dup:
            raise OverlappingInstances(f"{what}: vertex {min(dup)} belongs to two symbols")
        seen.update(s.members)


@dataclass
class MatchResult:
    tp: list[tuple[int, int, float]] = field(default_factory=list)  # (pred, gt, iou)
    fp: list[int] = field(default_factory=list)
    fn: list[int] = field(default_factory=list)


def match_symbols(preds: Sequence[SymbolInstance], gts: Sequence[SymbolInstance],
                  lengths: np.ndarray) -> MatchResult:
    """Pairs with IoU > 0.5. On partitions such pairs are unique, which is asserted."""
    check_partition(preds, "predictions")
    check_partition(gts, "ground truth")
    owner = {}
    for g, s in enumerate(gts):
        for m in s.members:
            owner[m] = g
    res = MatchResult()
    used_gt: set[int] = set()
    for p, ps in enumerate(preds):
        cands = {owner[m] for m in ps.members if m in owner}
        best = None
        for g in sorted(cands):
            iou = symbol_iou(ps, gts[g], lengths)
            if iou > IOU_MATCH:
                assert best is None, "two ground truths matched one prediction"
                best = (g, iou)
        if best is None:
            res.fp.append(p)
        else:
            assert best[0] not in used_gt, "ground truth matched twice"
            used_gt.add(best[0])
            res.tp.append((p, best[0], best[1]))
    res.fn = [g for g in range(len(gts)) if g not in used_gt]
    return res


@dataclass
class PQAccumulator:
    """Per-class TP/FP/FN counts and IoU sums, folded over drawings."""

    tp: dict[int, int] = field(default_factory=dict)
    fp: dict[int, int] = field(default_factory=dict)
    fn: dict[int, int] = field(default_factory=dict)
    iou: dict[int, list[float]] = field(default_factory=dict)

    def add(self, preds, gts, lengths):
        res = match_symbols(preds, gts, lengths)
        for p, g, iou in res.tp:
            c = gts[g].label
            self.tp[c] = self.tp.get(c, 0) + 1
            self.iou.setdefault(c, []).append(iou)
        for p in res.fp:
            c = preds[p].label
            self.fp[c] = self.fp.get(c, 0) + 1
        for g in res.fn:
            c = gts[g].label
            self.fn[c] = self.fn.get(c, 0) + 1
        return res

    @staticmethod
    def _quality(tp, fp, fn, ious):
        denom = tp + 0.5 * fp + 0.5 * fn
        rq = tp / denom if denom > 0 else 0.0
        sq = math.fsum(ious) / tp if tp > 0 else 0.0
        return sq * rq, sq, rq

    def result(self, classes: ClassTable | None = None) -> dict:
        labels = sorted(set(self.tp) | set(self.fp) | set(self.fn))
        tp = sum(self.tp.values())
        fp = sum(self.fp.values())
        fn = sum(self.fn.values())
        pq, sq, rq = self._quality(tp, fp, fn, [v for c in labels for v in self.iou.get(c, [])])
        per_class = {}
        wsum = np.zeros(3)
        wtot = 0
        for c in labels:
            t, f1, f2 = self.tp.get(c, 0), self.fp.get(c, 0), self.fn.get(c, 0)
            cpq, csq, crq = self._quality(t, f1, f2, self.iou.get(c, []))
            name = classes.name(c) if classes is not None else str(c)
            n_gt = t + f2
            per_class[name] = {"PQ": cpq, "SQ": csq, "RQ": crq, "TP": t, "FP": f1, "FN": f2,
                               "num_gt": n_gt}
            wsum += n_gt * np.array([cpq, csq, crq])
            wtot += n_gt
        weighted = wsum / wtot if wtot else np.zeros(3)
        return {"PQ": pq, "SQ": sq, "RQ": rq, "TP": tp, "FP": fp, "FN": fn,
                "class_weighted": {"PQ": float(weighted[0]), "SQ": float(weighted[1]),
                                   "RQ": float(weighted[2])},
                "per_class": per_class}


def panoptic_quality(preds: Sequence[SymbolInstance], gts: Sequence[SymbolInstance],
                     lengths: np.ndarray, classes: ClassTable | None = None) -> dict:
    """PQ, SQ and RQ over all symbols of one drawing, plus per-class values."""
    acc = PQAccumulator()
    acc.add(preds, gts, lengths)
    return acc.result(classes)


@dataclass
class F1Counts:
    tp: float = 0.0
    fp: float = 0.0
    fn: float = 0.0

    def f1(self) -> tuple[float, bool]:
        denom = 2 * self.tp + self.fp + self.fn
        if denom == 0:
            return 0.0, True
        return 2 * self.tp / denom, False


def f1_counts(pred: np.ndarray, gt: np.ndarray, weights: np.ndarray, background: int) -> F1Counts:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    w = np.asarray(weights, dtype=float)
    hit = pred == gt
    return F1Counts(
        tp=float(w[hit & (gt != background)].sum()),
        fp=float(w[~hit & (pred != background)].sum()),
        fn=float(w[~hit & (gt != background)].sum()),
    )


def semantic_f1(pred_classes, gt_classes, lengths, background: int) -> dict:
    """Micro F1 over non-background classes, per primitive and per millimetre.

    ``degenerate`` is set when there is nothing positive on either side, in
    which case the F1 value is reported as 0.
    """
    plain, plain_deg = f1_counts(pred_classes, gt_classes, np.ones(len(gt_classes)), background).f1()
    weighted, w_deg = f1_counts(pred_classes, gt_classes, lengths, background).f1()
    return {"F1": plain, "length_weighted_F1": weighted, "degenerate": plain_deg or w_deg}


# ---------------------------------------------------------------- detection AP

def box_iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


@dataclass
class Detection:
    image: int
    label: int
    box: tuple[float, float, float, float]
    score: float = 1.0


RECALL_POINTS = np.linspace(0.0, 1.0, 101)
COCO_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))


def _class_ap(preds: list[Detection], gts: list[Detection], thr: float) -> float | None:
    if not gts:
        return None
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    used: set[int] = set()
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        p = preds[i]
        best, best_iou = None, thr
        for g, gd in enumerate(gts):
            if g in used or gd.image != p.image:
                continue
            iou = box_iou(p.box, gd.box)
            if iou >= best_iou:
                best, best_iou = g, iou
        if best is not None:
            used.add(best)
            tp[rank] = 1
    return interpolated_ap(tp, len(gts))


def interpolated_ap(tp_flags: np.ndarray, num_gt: int) -> float:
    """101-point interpolated AP from ranked true-positive flags."""
    if len(tp_flags) == 0:
        return 0.0
    ctp = np.cumsum(tp_flags)
    recall = ctp / num_gt
    precision = ctp / np.arange(1, len(tp_flags) + 1)
    # precision envelope
    for k in range(len(precision) - 2, -1, -1):
        precision[k] = max(precision[k], precision[k + 1])
    out = 0.0
    for r in RECALL_POINTS:
        k = np.searchsorted(recall, r, side="left")
        out += precision[k] if k < len(precision) else 0.0
    return out / len(RECALL_POINTS)


def detection_ap(preds: Sequence[Detection], gts: Sequence[Detection],
                 thresholds=COCO_THRESHOLDS) -> dict:
    """AP50, AP75 and mAP (mean over ``thresholds``), averaged over ground-truth classes."""
    labels = sorted({g.label for g in gts})

    def ap_at(thr):
        vals = []
        for c in labels:
            v = _class_ap([p for p in preds if p.label == c], [g for g in gts if g.label == c], thr)
            if v is not None:
                vals.append(v)
        return float(np.mean(vals)) if vals else 0.0

    return {"AP50": ap_at(0.5), "AP75": ap_at(0.75),
            "mAP": float(np.mean([ap_at(t) for t in thresholds]))}


def detections_from(instances: Sequence[SymbolInstance], image: int) -> list[Detection]:
    return [Detection(image, s.label, tuple(s.bbox), s.confidence) for s in instances]
