import json

import numpy as np
import pytest

from cadspot import autodiff as ad
from cadspot.errors import ConfigMismatch, MismatchedEdgeLists, VersionMismatch
from cadspot.graph import permute_graph
from cadspot.model import (
    BASELINE,
    FULL,
    Ablation,
    ModelConfig,
    cee_aggregate,
    embed_inputs,
    forward,
    init_params,
    layer_shapes,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from cadspot.training import loss_and_grads
from fixtures import class_table, random_graph
from oracles import dense_forward

SMALL = ModelConfig(stages=3, heads=4, width=16, num_classes=4, init_seed=0)


def small_graph(seed=0, n=12):
    return random_graph(np.random.default_rng(seed), n)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("ablation", [FULL, BASELINE, Ablation(True, "stage:2"), Ablation(False, "sum")])
def test_sparse_forward_matches_dense_reference(seed, ablation):
    g = small_graph(seed, n=int(np.random.default_rng(seed).integers(2, 21)))
    params = init_params(SMALL, seed)
    out = forward(g, params, SMALL, ablation)
    y, z = dense_forward(g, params, SMALL, rse=ablation.rse, cee=ablation.cee)
    assert np.allclose(out.semantic_probs, y, atol=1e-10, rtol=0)
    assert np.allclose(out.adjacency, z, atol=1e-10, rtol=0)


def test_scaled_attention_matches_dense_reference():
    cfg = ModelConfig(stages=2, heads=2, width=8, num_classes=4, scaled_attention=True)
    g = small_graph(3)
    params = init_params(cfg)
    out = forward(g, params, cfg)
    y, z = dense_forward(g, params, cfg)
    assert np.allclose(out.semantic_probs, y, atol=1e-10, rtol=0)
    assert np.allclose(out.adjacency, z, atol=1e-10, rtol=0)


@pytest.mark.parametrize("seed", range(5))
def test_permutation_equivariance(seed):
    rng = np.random.default_rng(seed)
    g = small_graph(seed, n=15)
    perm = rng.permutation(g.num_vertices)
    pg = permute_graph(g, perm)
    params = init_params(SMALL, seed)
    a, b = forward(g, params, SMALL), forward(pg, params, SMALL)
    assert np.allclose(b.semantic_probs, a.semantic_probs[perm], atol=1e-9, rtol=0)
    lookup = {(int(s), int(d)): e for e, (s, d) in enumerate(zip(g.src, g.dst))}
    idx = [lookup[(perm[s], perm[d])] for s, d in zip(pg.src, pg.dst)]
    assert np.allclose(b.adjacency, a.adjacency[idx], atol=1e-9, rtol=0)


def test_isolated_vertex_pools_to_zero():
    from cadspot.geometry import Primitive, Segment
    from cadspot.graph import build_graph

    g = build_graph([Primitive(Segment((0, 0), (1000, 0))), Primitive(Segment((0, 100), (1000, 100))),
                     Primitive(Segment((9000, 9000), (9500, 9000)))])
    assert g.degrees.tolist() == [1, 1, 0]
    tape = ad.Tape()
    tp = {k: tape.leaf(v) for k, v in init_params(SMALL).items()}
    v0 = embed_inputs(g, tp, tape).value
    half = SMALL.vertex_embed_width
    assert np.all(v0[2, half:] == 0.0)
    assert np.any(v0[0, half:] != 0.0)


def test_zero_query_weights_leave_only_the_spatial_bias():
    g = small_graph(1)
    params = init_params(SMALL)
    params["stage0.wq"][:] = 0.0
    out = forward(g, params, SMALL)
    assert np.all(out.stage_scores[0] == 0.0)
    # first stage by hand: attention is softmax of the RSE bias alone
    tape = ad.Tape()
    tp = {k: tape.leaf(v) for k, v in params.items()}
    v0 = embed_inputs(g, tp, tape).value
    alpha = ad.segment_softmax(tape.leaf(out.rse), g.indptr).value
    val = (v0 @ params["stage0.wv"])[g.dst].reshape(g.num_edges, SMALL.heads, -1)
    agg = np.zeros((g.num_vertices, SMALL.width))
    np.add.at(agg, g.src, (val * alpha[:, :, None]).reshape(g.num_edges, -1))
    h = np.maximum(agg @ params["stage0.mlp.0.weight"] + params["stage0.mlp.0.bias"], 0)
    v1 = v0 + h @ params["stage0.mlp.1.weight"] + params["stage0.mlp.1.bias"]
    q = (v1 @ params["stage1.wq"])[g.src].reshape(g.num_edges, SMALL.heads, -1)
    k = (v1 @ params["stage1.wk"])[g.dst].reshape(g.num_edges, SMALL.heads, -1)
    assert np.allclose(out.stage_scores[1], np.einsum("ehd,ehd->eh", q, k), atol=1e-10)


def test_zero_stage_output_is_a_pure_residual():
    g = small_graph(2)
    params = init_params(SMALL)
    for s in range(SMALL.stages):
        params[f"stage{s}.mlp.1.weight"][:] = 0.0
    tape = ad.Tape()
    v0 = embed_inputs(g, {k: tape.leaf(v) for k, v in params.items()}, tape).value
    assert np.array_equal(forward(g, params, SMALL).vertex_features, v0)


def test_zero_spatial_encoder_equals_disabled_encoder_bitwise():
    g = small_graph(4)
    params = init_params(SMALL)
    for k in params:
        if k.startswith("rse_mlp"):
            params[k][:] = 0.0
    on = forward(g, params, SMALL, Ablation(True, "sum"))
    off = forward(g, params, SMALL, Ablation(False, "sum"))
    assert on.semantic_probs.tobytes() == off.semantic_probs.tobytes()
    assert on.adjacency.tobytes() == off.adjacency.tobytes()


def test_edge_encoding_modes():
    g = small_graph(5)
    params = init_params(SMALL)
    full = forward(g, params, SMALL, FULL)
    assert np.allclose(full.cee, sum(full.stage_scores), atol=1e-12)
    last = forward(g, params, SMALL, Ablation(True, f"stage:{SMALL.stages}"))
    assert np.array_equal(last.cee, full.stage_scores[-1])
    off = forward(g, params, SMALL, Ablation(True, "off"))
    assert np.all(off.cee == 0.0) and off.cee.shape == (g.num_edges, SMALL.heads)


def test_single_stage_sum_equals_that_stage():
    cfg = ModelConfig(stages=1, heads=2, width=8, num_classes=4)
    g = small_graph(6)
    params = init_params(cfg)
    a = forward(g, params, cfg, Ablation(True, "sum"))
    b = forward(g, params, cfg, Ablation(True, "stage:1"))
    assert np.array_equal(a.cee, a.stage_scores[0])
    assert np.array_equal(a.adjacency, b.adjacency)


def test_mismatched_stage_scores_rejected():
    tape = ad.Tape()
    with pytest.raises(MismatchedEdgeLists):
        cee_aggregate([tape.leaf(np.zeros((5, 2))), tape.leaf(np.zeros((6, 2)))])
    with pytest.raises(ValueError):
        cee_aggregate([tape.leaf(np.zeros((5, 2)))], stage=2)
    with pytest.raises(ValueError):
        Ablation(True, "mean")


def test_zero_final_instance_layer_gives_one_half():
    g = small_graph(7)
    params = init_params(SMALL)
    last = len(SMALL.instance_hidden)
    params[f"instance_mlp.{last}.weight"][:] = 0.0
    params[f"instance_mlp.{last}.bias"][:] = 0.0
    assert np.all(forward(g, params, SMALL).adjacency == 0.5)


def test_output_shapes_and_probabilities():
    g = small_graph(8)
    out = forward(g, init_params(SMALL), SMALL)
    n, e = g.num_vertices, g.num_edges
    assert out.semantic_probs.shape == (n, SMALL.num_classes)
    assert np.allclose(out.semantic_probs.sum(axis=1), 1.0, atol=1e-12)
    assert out.adjacency.shape == (e,)
    assert np.all((out.adjacency > 0) & (out.adjacency < 1))
    assert len(out.stage_scores) == SMALL.stages
    assert all(s.shape == (e, SMALL.heads) for s in out.stage_scores)
    assert out.vertex_features.shape == (n, SMALL.width)


def test_heads_must_divide_width():
    with pytest.raises(ValueError):
        ModelConfig(width=10, heads=4)


def test_parameter_count_small_config():
    cfg = ModelConfig(stages=1, heads=2, width=8, num_classes=3)
    # embeddings 52 + 52, rse 22, stage 192 + 144, semantic 99, instance 173
    assert parameter_count(init_params(cfg)) == 734
    assert layer_shapes(cfg)["instance_mlp"] == [(18, 8), (8, 2), (2, 1)]


def test_default_config_layout():
    cfg = ModelConfig()
    shapes = layer_shapes(cfg)
    assert shapes["instance_mlp"] == [(8 + 256, 128), (128, 32), (32, 1)]
    assert shapes["semantic_mlp"][-1] == (128, 36)
    assert sum(1 for k in shapes if k.startswith("stage")) == 8


def test_init_is_seeded():
    a, b, c = init_params(SMALL, 1), init_params(SMALL, 1), init_params(SMALL, 2)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not np.array_equal(a["stage0.wq"], c["stage0.wq"])


def test_gradients_are_finite():
    g = small_graph(9)
    res = loss_and_grads(g, init_params(SMALL), SMALL, class_table())
    assert np.isfinite(res.loss)
    assert set(res.grads) == set(init_params(SMALL))
    assert all(np.all(np.isfinite(v)) for v in res.grads.values())


def test_checkpoint_round_trip(tmp_path):
    params = init_params(SMALL, 3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, SMALL, params, {"note": 1})
    cfg, loaded, extra = load_checkpoint(path, SMALL)
    assert cfg == SMALL and extra == {"note": 1}
    assert all(loaded[k].tobytes() == params[k].tobytes() for k in params)
    with pytest.raises(ConfigMismatch):
        load_checkpoint(path, ModelConfig(stages=2, heads=4, width=16, num_classes=4))
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)
