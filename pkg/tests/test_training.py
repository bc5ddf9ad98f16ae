import json
import math

import numpy as np
import pytest

from cadspot import autodiff as ad
from cadspot.data import SyntheticSpec, synthesize_records
from cadspot.graph import build_graph
from cadspot.model import ModelConfig, init_params
from cadspot.training import (
    InstanceWeightTable,
    OptimizerState,
    TrainConfig,
    adam_step,
    build_gt_adjacency,
    instance_loss,
    instance_weights,
    learning_rate,
    load_train_state,
    loss_and_grads,
    panoptic_loss,
    semantic_loss,
    train,
)
from fixtures import class_table, random_graph

TINY = ModelConfig(stages=2, heads=2, width=16, num_classes=5, init_seed=0)


def synthetic_graphs(n, seed=0):
    spec = SyntheticSpec()
    return [build_graph(r.primitives) for r in synthesize_records(seed, n, spec)], spec.class_table()


def scalar(t):
    return float(t.value)


# ---------------------------------------------------------------- ground truth adjacency

def test_gt_adjacency_examples():
    classes = class_table(4)  # thing0, thing1, stuff, background
    from cadspot.geometry import Primitive, Segment
    from cadspot.graph import GraphConfig

    prims = [
        Primitive(Segment((0, 0), (100, 0)), 2), Primitive(Segment((0, 50), (100, 50)), 2),  # stuff
        Primitive(Segment((0, 100), (100, 100)), 0, 7), Primitive(Segment((0, 150), (100, 150)), 0, 7),
        Primitive(Segment((0, 200), (100, 200)), 1, 7),
    ]
    g = build_graph(prims, GraphConfig(max_degree=5))
    z = build_gt_adjacency(g, classes)
    pairs = {(int(s), int(d)): v for s, d, v in zip(g.src, g.dst, z)}
    assert pairs[(0, 1)] == 0.0
    assert pairs[(2, 3)] == 1.0 and pairs[(3, 2)] == 1.0
    assert pairs[(3, 4)] == 0.0


# ---------------------------------------------------------------- losses

def test_semantic_loss_examples():
    tape = ad.Tape()
    perfect = tape.leaf(np.log(np.array([[1.0, 1e-300], [1e-300, 1.0]])))
    assert scalar(semantic_loss(perfect, np.array([0, 1]))) == 0.0
    uniform = tape.leaf(np.full((3, 36), -math.log(36)))
    assert scalar(semantic_loss(uniform, np.array([0, 5, 35]))) == pytest.approx(math.log(36), abs=1e-15)
    hand = tape.leaf(np.log(np.array([[0.7, 0.2, 0.1], [0.25, 0.25, 0.5]])))
    assert scalar(semantic_loss(hand, np.array([0, 2]))) == pytest.approx(
        -(math.log(0.7) + math.log(0.5)) / 2, abs=1e-15)


def test_semantic_label_out_of_range():
    tape = ad.Tape()
    with pytest.raises(ValueError):
        semantic_loss(tape.leaf(np.zeros((2, 3))), np.array([0, 3]))


def test_weight_table_lookup():
    t = InstanceWeightTable()
    same = np.array([True, True, False, False])
    zgt = np.array([0, 1, 0, 1])
    assert t.lookup(same, zgt).tolist() == [20.0, 2.0, 1.0, 0.0]
    with pytest.raises(ValueError):
        InstanceWeightTable(same_class_same_inst=-1)


def test_single_edge_loss_is_ln2():
    tape = ad.Tape()
    z_logit = tape.leaf(np.array([0.0]))  # sigmoid(0) = 0.5
    w = InstanceWeightTable().lookup(np.array([True]), np.array([1.0]))
    assert w.tolist() == [2.0]
    assert scalar(instance_loss(z_logit, np.array([1.0]), w)) == pytest.approx(math.log(2), abs=1e-15)


def test_weight_zero_edges_have_zero_gradient():
    rng = np.random.default_rng(0)
    tape = ad.Tape()
    logits = tape.leaf(rng.normal(size=8), requires_grad=True)
    zgt = np.array([1, 1, 0, 0, 1, 0, 1, 0], dtype=float)
    same = np.array([0, 1, 1, 0, 0, 1, 1, 0], dtype=bool)
    w = InstanceWeightTable().lookup(same, zgt)
    g = tape.gradients(instance_loss(logits, zgt, w), {"z": logits})["z"]
    assert np.all(g[w == 0] == 0.0)
    assert np.all(g[w > 0] != 0.0)
    # dropping weight-0 edges does not change the loss
    keep = w > 0
    t2 = ad.Tape()
    ref = instance_loss(t2.leaf(logits.value[keep]), zgt[keep], w[keep])
    assert scalar(instance_loss(logits, zgt, w)) == pytest.approx(scalar(ref), abs=1e-15)


def test_panoptic_loss_combination():
    tape = ad.Tape()
    sem, ins = tape.leaf(np.array(1.0)), tape.leaf(np.array(0.5))
    assert scalar(panoptic_loss(sem, ins, 2.0)) == 2.0
    assert scalar(panoptic_loss(sem, ins, 0.0)) == 1.0
    assert TrainConfig().lam == 2.0


def test_loss_parts_add_up():
    g = random_graph(np.random.default_rng(1), 15, num_classes=5)
    res = loss_and_grads(g, init_params(TINY), TINY, class_table(5))
    assert res.loss == pytest.approx(res.semantic + 2.0 * res.instance, abs=1e-12)


def test_instance_weights_use_ground_truth_classes():
    g = random_graph(np.random.default_rng(2), 15)
    zgt = build_gt_adjacency(g, class_table())
    w = instance_weights(g, zgt)
    same = g.semantic[g.src] == g.semantic[g.dst]
    assert np.all(w[same & (zgt == 1)] == 2) and np.all(w[~same] == 1)


# ---------------------------------------------------------------- optimiser

def test_learning_rate_schedule():
    assert learning_rate(0) == 0.001
    assert learning_rate(19) == 0.001
    assert learning_rate(20) == 0.0007
    assert learning_rate(40) == 0.00049
    assert learning_rate(99) == learning_rate(80)


def test_config_validation():
    for bad in (dict(lr=0), dict(beta1=1.0), dict(beta2=0.0), dict(lam=-1)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_adam_first_step_is_signed_lr():
    params = {"w": np.array([1.0, -2.0, 0.5, 3.0])}
    grads = {"w": np.array([0.3, -4.0, 1e-3, 0.0])}
    state = OptimizerState.zeros_like(params)
    cfg = TrainConfig()
    adam_step(params, grads, state, cfg, epoch=0)
    step = params["w"] - np.array([1.0, -2.0, 0.5, 3.0])
    g = grads["w"]
    expected = -0.001 * g / (np.abs(g) + 1e-8)
    assert np.allclose(step, expected, atol=1e-9, rtol=0)
    assert step[3] == 0.0
    assert state.step == 1


def test_adam_uses_decayed_rate():
    params = {"w": np.array([0.0])}
    state = OptimizerState.zeros_like(params)
    adam_step(params, {"w": np.array([5.0])}, state, TrainConfig(), epoch=40)
    assert params["w"][0] == pytest.approx(-0.00049, abs=1e-9)


def test_adam_matches_reference_over_several_steps():
    rng = np.random.default_rng(3)
    cfg = TrainConfig()
    params = {"a": rng.normal(size=(3, 2))}
    ref = params["a"].copy()
    m = np.zeros_like(ref)
    v = np.zeros_like(ref)
    state = OptimizerState.zeros_like(params)
    for t in range(1, 6):
        g = rng.normal(size=(3, 2))
        adam_step(params, {"a": g}, state, cfg, epoch=0)
        m = 0.9 * m + 0.1 * g
        v = 0.99 * v + 0.01 * g * g
        ref = ref - 0.001 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.99 ** t)) + 1e-8)
    assert np.allclose(params["a"], ref, atol=1e-15)


# ---------------------------------------------------------------- training loop

def test_loss_mostly_decreases_over_ten_epochs():
    graphs, classes = synthetic_graphs(4)
    cfg = ModelConfig(stages=2, heads=2, width=32, num_classes=len(classes))
    _, hist = train(graphs, cfg, classes, TrainConfig(epochs=10), eval_every=10)
    totals = [h["train_loss_sem"] + 2 * h["train_loss_ins"] for h in hist]
    assert all(math.isfinite(x) for x in totals)
    drops = sum(b < a for a, b in zip(totals, totals[1:]))
    assert drops >= 8, totals
    assert totals[-1] < totals[0]


def test_training_writes_log_and_checkpoints(tmp_path):
    graphs, classes = synthetic_graphs(2)
    cfg = ModelConfig(stages=1, heads=2, width=16, num_classes=len(classes))
    state, hist = train(graphs, cfg, classes, TrainConfig(epochs=3), out_dir=tmp_path)
    lines = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [0, 1, 2]
    for r in lines:
        assert {"epoch", "lr", "train_loss_sem", "train_loss_ins", "val_PQ", "val_SQ", "val_RQ"} <= set(r)
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()
    assert state.epoch == 3 and state.best_epoch >= 0


def test_training_rejects_empty_split():
    with pytest.raises(ValueError):
        train([], TINY, class_table(5))


def test_training_is_deterministic():
    graphs, classes = synthetic_graphs(2, seed=4)
    cfg = ModelConfig(stages=1, heads=2, width=16, num_classes=len(classes))
    a, _ = train(graphs, cfg, classes, TrainConfig(epochs=2), eval_every=2)
    b, _ = train(graphs, cfg, classes, TrainConfig(epochs=2), eval_every=2)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)


def test_resume_reproduces_next_epoch_bitwise(tmp_path):
    graphs, classes = synthetic_graphs(3, seed=5)
    cfg = ModelConfig(stages=1, heads=2, width=16, num_classes=len(classes))
    tc = TrainConfig(epochs=4)
    straight, hist_a = train(graphs, cfg, classes, tc)
    train(graphs, cfg, classes, tc, out_dir=tmp_path, epochs=2)
    _, state = load_train_state(tmp_path / "last.ckpt", cfg)
    assert state.epoch == 2
    resumed, hist_b = train(graphs, cfg, classes, tc, state=state)
    assert all(straight.params[k].tobytes() == resumed.params[k].tobytes() for k in straight.params)
    assert hist_a[2:] == hist_b
