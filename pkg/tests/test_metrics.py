import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadspot.errors import OverlappingInstances
from cadspot.extract import SymbolInstance
from cadspot.metrics import (
    Detection,
    PQAccumulator,
    box_iou,
    detection_ap,
    interpolated_ap,
    match_symbols,
    panoptic_quality,
    semantic_f1,
    symbol_iou,
)
from oracles import brute_force_ap, exhaustive_pq


def sym(label, *members, conf=1.0, bbox=(0, 0, 0, 0)):
    return SymbolInstance(label, members, conf, bbox)


# ---------------------------------------------------------------- IoU

def test_symbol_iou_examples():
    lengths = np.array([1000.0, 1000.0, 2000.0, 500.0])
    assert symbol_iou(sym(0, 0, 1), sym(0, 0, 1), lengths) == 1.0
    assert symbol_iou(sym(0, 0, 1), sym(0, 2, 3), lengths) == 0.0
    assert symbol_iou(sym(0, 0, 1), sym(0, 0, 1, 2), lengths) == 0.5
    assert symbol_iou(sym(0, 0, 1), sym(1, 0, 1), lengths) == 0.0


@given(st.sets(st.integers(0, 9), min_size=1), st.sets(st.integers(0, 9), min_size=1),
       st.integers(0, 1), st.integers(0, 1), st.integers(0, 1000))
def test_symbol_iou_symmetry_and_identity(a, b, la, lb, seed):
    lengths = np.random.default_rng(seed).uniform(1, 3000, 10)
    sa, sb = sym(la, *a), sym(lb, *b)
    v = symbol_iou(sa, sb, lengths)
    assert v == symbol_iou(sb, sa, lengths)
    assert 0.0 <= v <= 1.0
    assert (v == 1.0) == (a == b and la == lb)


# ---------------------------------------------------------------- PQ

def test_pq_hand_case():
    # gt A = {0,1,2,3,4} (matched at IoU 0.8 by {0,1,2,3}), gt B = {5} missed, spurious pred {6}
    lengths = np.ones(7)
    gts = [sym(0, 0, 1, 2, 3, 4), sym(0, 5)]
    preds = [sym(0, 0, 1, 2, 3), sym(0, 6)]
    r = panoptic_quality(preds, gts, lengths)
    assert (r["TP"], r["FP"], r["FN"]) == (1, 1, 1)
    assert r["RQ"] == 0.5 and r["SQ"] == 0.8 and r["PQ"] == 0.4
    ref = exhaustive_pq(preds, gts, lengths)
    assert (ref["PQ"], ref["SQ"], ref["RQ"]) == (r["PQ"], r["SQ"], r["RQ"])


def test_pq_trivial_cases():
    lengths = np.ones(3)
    gts = [sym(0, 0, 1), sym(1, 2)]
    r = panoptic_quality(gts, gts, lengths)
    assert r["PQ"] == r["SQ"] == r["RQ"] == 1.0
    r = panoptic_quality([], [sym(0, 0)], lengths)
    assert (r["TP"], r["FN"], r["PQ"]) == (0, 1, 0.0)
    r = panoptic_quality([], [], lengths)
    assert r["PQ"] == 0.0


def test_half_overlap_does_not_match():
    lengths = np.ones(4)
    r = panoptic_quality([sym(0, 0, 1)], [sym(0, 1, 2)], lengths)
    assert r["TP"] == 0 and r["FP"] == 1 and r["FN"] == 1


def test_overlapping_input_rejected():
    with pytest.raises(OverlappingInstances):
        panoptic_quality([sym(0, 0, 1), sym(1, 1)], [sym(0, 0)], np.ones(2))
    with pytest.raises(OverlappingInstances):
        panoptic_quality([sym(0, 0)], [sym(0, 0), sym(0, 0, 1)], np.ones(2))


def test_class_weighted_aggregate():
    lengths = np.ones(6)
    gts = [sym(0, 0), sym(0, 1), sym(0, 2), sym(1, 3)]
    preds = [sym(0, 0), sym(0, 1), sym(0, 2)]  # class 1 missed entirely
    r = panoptic_quality(preds, gts, lengths)
    assert r["per_class"]["0"]["PQ"] == 1.0 and r["per_class"]["1"]["PQ"] == 0.0
    assert r["class_weighted"]["PQ"] == pytest.approx(0.75)
    assert r["PQ"] == pytest.approx(3 / 3.5)


def random_partition(rng, n, labels, max_symbols):
    k = int(rng.integers(0, max_symbols + 1))
    assign = rng.integers(-1, k, n) if k else np.full(n, -1)
    out = []
    for s in range(k):
        members = np.flatnonzero(assign == s)
        if len(members):
            out.append(sym(int(rng.integers(0, labels)), *members.tolist()))
    return out


@given(st.integers(0, 100_000))
@settings(max_examples=200, deadline=None)
def test_pq_matches_exhaustive_matching(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    lengths = rng.uniform(10, 3000, n)
    gts = random_partition(rng, n, 2, 6)
    if rng.uniform() < 0.5 and gts:
        # perturb the ground truth so matches actually occur
        preds = []
        for s in gts:
            keep = [m for m in s.members if rng.uniform() > 0.2] or list(s.members[:1])
            preds.append(sym(s.label if rng.uniform() > 0.1 else 1 - s.label, *keep))
    else:
        preds = random_partition(rng, n, 2, 6)
    r = panoptic_quality(preds, gts, lengths)
    ref = exhaustive_pq(preds, gts, lengths)
    for k in ("PQ", "SQ", "RQ", "TP", "FP", "FN"):
        assert r[k] == ref[k], (k, r[k], ref[k])
    assert 0.0 <= r["PQ"] <= 1.0
    assert r["PQ"] == r["SQ"] * r["RQ"]
    res = match_symbols(preds, gts, lengths)
    assert len({p for p, _, _ in res.tp}) == len(res.tp) == len({g for _, g, _ in res.tp})
    assert all(iou > 0.5 for _, _, iou in res.tp)


def test_accumulator_folds_drawings():
    acc = PQAccumulator()
    acc.add([sym(0, 0, 1)], [sym(0, 0, 1)], np.ones(2))
    acc.add([sym(0, 0)], [sym(0, 1)], np.ones(2))
    r = acc.result()
    assert (r["TP"], r["FP"], r["FN"]) == (1, 1, 1)
    assert r["PQ"] == 0.5


# ---------------------------------------------------------------- semantic F1

def test_f1_examples():
    r = semantic_f1([0, 1], [0, 1], [1.0, 1.0], background=2)
    assert (r["F1"], r["length_weighted_F1"], r["degenerate"]) == (1.0, 1.0, False)
    r = semantic_f1([0, 2], [0, 1], [1000.0, 3000.0], background=2)
    assert r["F1"] == pytest.approx(2 / 3)
    # first correct only, second mislabelled as another foreground class
    r = semantic_f1([0, 0], [0, 1], [1000.0, 3000.0], background=2)
    assert r["F1"] == 0.5 and r["length_weighted_F1"] == 0.25


def test_f1_degenerate_flag():
    r = semantic_f1([2, 2], [2, 2], [1.0, 1.0], background=2)
    assert r["F1"] == 0.0 and r["degenerate"]


# ---------------------------------------------------------------- detection AP

def test_box_iou():
    assert box_iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    assert box_iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0


def test_single_perfect_box():
    d = [Detection(0, 0, (0, 0, 10, 10), 1.0)]
    assert detection_ap(d, d) == {"AP50": 1.0, "AP75": 1.0, "mAP": 1.0}


def test_iou_06_counts_at_50_only():
    gt = [Detection(0, 0, (0, 0, 10, 10))]
    pred = [Detection(0, 0, (0, 0, 10, 6), 0.9)]  # IoU 0.6
    r = detection_ap(pred, gt)
    assert r["AP50"] == 1.0 and r["AP75"] == 0.0


def test_three_box_hand_case():
    gts = [Detection(0, 0, (0, 0, 10, 10)), Detection(0, 0, (20, 0, 30, 10)), Detection(1, 0, (0, 0, 5, 5))]
    preds = [Detection(0, 0, (0, 0, 10, 9), 0.9), Detection(0, 0, (50, 50, 60, 60), 0.8),
             Detection(1, 0, (0, 0, 5, 5), 0.7), Detection(0, 0, (21, 0, 30, 10), 0.6)]
    # ranked hits T F T T: precision 1, .5, .67, .75 at recall 1/3, 1/3, 2/3, 1
    r = detection_ap(preds, gts)
    expected = (34 * 1.0 + 67 * 0.75) / 101
    assert r["AP50"] == pytest.approx(expected, abs=1e-12)
    assert r["AP50"] == pytest.approx(brute_force_ap(preds, gts, 0.5), abs=1e-12)


def test_interpolated_ap_edges():
    assert interpolated_ap(np.array([]), 3) == 0.0
    assert interpolated_ap(np.array([1.0, 1.0]), 2) == 1.0
    assert interpolated_ap(np.array([0.0, 0.0]), 2) == 0.0


@given(st.integers(0, 100_000))
@settings(max_examples=100, deadline=None)
def test_ap_matches_definition(seed):
    rng = np.random.default_rng(seed)

    def box():
        x, y = rng.uniform(0, 100, 2)
        w, h = rng.uniform(5, 40, 2)
        return (x, y, x + w, y + h)

    gts = [Detection(int(rng.integers(0, 2)), int(rng.integers(0, 2)), box())
           for _ in range(int(rng.integers(1, 6)))]
    preds = []
    for g in gts:
        if rng.uniform() < 0.7:
            j = rng.normal(0, 3, 4)
            preds.append(Detection(g.image, g.label, tuple(np.array(g.box) + j), float(rng.uniform())))
    preds += [Detection(int(rng.integers(0, 2)), int(rng.integers(0, 2)), box(), float(rng.uniform()))
              for _ in range(int(rng.integers(0, 4)))]
    r = detection_ap(preds, gts)
    for thr, key in ((0.5, "AP50"), (0.75, "AP75")):
        assert r[key] == pytest.approx(brute_force_ap(preds, gts, thr), abs=1e-12)
    assert 0.0 <= r["mAP"] <= r["AP50"] + 1e-12
