"""The graph attention network: embeddings, relative spatial encoding, GAT stages,
semantic head, cascaded edge encoding and the adjacency (instance) head."""

from __future__ import annotations

import base64
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigMismatch, MismatchedEdgeLists, ShapeMismatch, VersionMismatch
from .graph import DrawingGraph

CHECKPOINT_SCHEMA = "cadspot-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    """Network hyper-parameters.

    Hidden widths left as ``None`` are derived from ``width``: embedding
    halves of ``width // 2``, an RSE hidden layer of ``width // 4``, and an
    instance head of ``(width, width // 4)``.
    """

    stages: int = 8
    heads: int = 8
    width: int = 128
    num_classes: int = 36
    vertex_embed_width: int | None = None
    edge_embed_width: int | None = None
    rse_hidden: int | None = None
    instance_hidden: tuple[int, ...] | None = None
    scaled_attention: bool = False
    init_seed: int = 0

    def __post_init__(self):
        half = self.width // 2
        if self.vertex_embed_width is None:
            object.__setattr__(self, "vertex_embed_width", half)
        if self.edge_embed_width is None:
            object.__setattr__(self, "edge_embed_width", self.width - self.vertex_embed_width)
        if self.rse_hidden is None:
            object.__setattr__(self, "rse_hidden", max(self.width // 4, 1))
        if self.instance_hidden is None:
            object.__setattr__(self, "instance_hidden", (self.width, max(self.width // 4, 1)))
        object.__setattr__(self, "instance_hidden", tuple(self.instance_hidden))
        if self.heads < 1 or self.width % self.heads:
            raise ValueError(f"width {self.width} is not divisible by {self.heads} heads")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.stages < 1:
            raise ValueError("at least one GAT stage is required")
        if self.vertex_embed_width + self.edge_embed_width != self.width:
            raise ValueError("vertex and edge embedding widths must add up to width")

    @property
    def head_dim(self) -> int:
        return self.width // self.heads

    def to_json(self) -> dict:
        d = asdict(self)
        d["instance_hidden"] = list(self.instance_hidden)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if d.get("instance_hidden") is not None:
            d["instance_hidden"] = tuple(d["instance_hidden"])
        return cls(**d)


@dataclass(frozen=True)
class Ablation:
    """Switches for the ablation configurations.

    ``cee`` is ``"sum"`` (all stages), ``"off"`` (zero edge encoding) or
    ``"stage:k"`` (only the k-th stage, 1-based).
    """

    rse: bool = True
    cee: str = "sum"

    def __post_init__(self):
        if self.cee not in ("sum", "off") and not self.cee.startswith("stage:"):
            raise ValueError(f"unknown cee mode {self.cee!r}")

    def cee_stage(self) -> int | None:
        return int(self.cee.split(":", 1)[1]) if self.cee.startswith("stage:") else None


FULL = Ablation(True, "sum")
BASELINE = Ablation(False, "off")


def layer_shapes(cfg: ModelConfig) -> dict[str, list[tuple[int, int]]]:
    """(fan_in, fan_out) of every affine layer, keyed by MLP name."""
    w = cfg.width
    shapes = {
        "vertex_mlp": [(7, cfg.vertex_embed_width), (cfg.vertex_embed_width, cfg.vertex_embed_width)],
        "edge_mlp": [(7, cfg.edge_embed_width), (cfg.edge_embed_width, cfg.edge_embed_width)],
        "rse_mlp": [(7, cfg.rse_hidden), (cfg.rse_hidden, cfg.heads)],
    }
    for s in range(cfg.stages):
        shapes[f"stage{s}.mlp"] = [(w, w), (w, w)]
    shapes["semantic_mlp"] = [(w, w), (w, cfg.num_classes)]
    dims = [cfg.heads + 2 * w, *cfg.instance_hidden, 1]
    shapes["instance_mlp"] = list(zip(dims[:-1], dims[1:]))
    return shapes


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights and zero biases under canonical names."""
    rng = np.random.default_rng(cfg.init_seed if seed is None else seed)
    params: dict[str, np.ndarray] = {}
    shapes = layer_shapes(cfg)
    for name in ("vertex_mlp", "edge_mlp", "rse_mlp"):
        _init_mlp(params, name, shapes[name], rng)
    for s in range(cfg.stages):
        for proj in ("wq", "wk", "wv"):
            params[f"stage{s}.{proj}"] = _glorot(rng, cfg.width, cfg.width)
        _init_mlp(params, f"stage{s}.mlp", shapes[f"stage{s}.mlp"], rng)
    _init_mlp(params, "semantic_mlp", shapes["semantic_mlp"], rng)
    _init_mlp(params, "instance_mlp", shapes["instance_mlp"], rng)
    return params


def _init_mlp(params, name, shapes, rng):
    for k, (fi, fo) in enumerate(shapes):
        params[f"{name}.{k}.weight"] = _glorot(rng, fi, fo)
        params[f"{name}.{k}.bias"] = np.zeros(fo)


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def check_params(params: dict[str, np.ndarray], cfg: ModelConfig):
    expected = init_shapes(cfg)
    if set(expected) != set(params):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise ShapeMismatch(f"parameter names differ: missing {missing[:5]}, unexpected {extra[:5]}")
    for k, shp in expected.items():
        if params[k].shape != shp:
            raise ShapeMismatch(f"{k}: expected {shp}, got {params[k].shape}")


def init_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    out: dict[str, tuple[int, ...]] = {}
    for name, layers in layer_shapes(cfg).items():
        for k, (fi, fo) in enumerate(layers):
            out[f"{name}.{k}.weight"] = (fi, fo)
            out[f"{name}.{k}.bias"] = (fo,)
    for s in range(cfg.stages):
        for proj in ("wq", "wk", "wv"):
            out[f"stage{s}.{proj}"] = (cfg.width, cfg.width)
    return out


# ---------------------------------------------------------------- forward pass

@dataclass
class TapeOutput:
    """Tensors of one forward pass, still attached to their tape."""

    tape: Tape
    params: dict[str, Tensor]
    semantic_logits: Tensor
    semantic_log_probs: Tensor
    stage_scores: list[Tensor]
    rse: Tensor | None
    cee: Tensor
    adjacency_logits: Tensor
    adjacency: Tensor
    vertex_features: Tensor


@dataclass
class ForwardOutput:
    semantic_logits: np.ndarray  # N x C
    semantic_probs: np.ndarray  # N x C
    stage_scores: list[np.ndarray]  # S arrays of E x H
    rse: np.ndarray  # E x H (zeros when disabled)
    cee: np.ndarray  # E x H
    adjacency_logits: np.ndarray  # E
    adjacency: np.ndarray  # E, probabilities
    vertex_features: np.ndarray  # N x width


def _mlp(tp: dict[str, Tensor], name: str) -> list[tuple[Tensor, Tensor]]:
    layers = []
    k = 0
    while f"{name}.{k}.weight" in tp:
        layers.append((tp[f"{name}.{k}.weight"], tp[f"{name}.{k}.bias"]))
        k += 1
    return layers


def embed_inputs(graph: DrawingGraph, tp: dict[str, Tensor], tape: Tape) -> Tensor:
    """``V0``: vertex embedding concatenated with the max-pooled outgoing edge embeddings."""
    v_hat = ad.mlp_forward(tape.leaf(graph.vertex_features), _mlp(tp, "vertex_mlp"))
    e_hat = ad.mlp_forward(tape.leaf(graph.edge_features), _mlp(tp, "edge_mlp"))
    pooled = ad.segment_max_pool(e_hat, graph.indptr)
    return ad.concat_lastdim([v_hat, pooled])


def rse_encode(graph: DrawingGraph, tp: dict[str, Tensor], tape: Tape) -> Tensor:
    """Per-edge, per-head attention bias from the raw edge features."""
    return ad.mlp_forward(tape.leaf(graph.edge_features), _mlp(tp, "rse_mlp"))


def gat_stage(v_prev: Tensor, graph: DrawingGraph, rse: Tensor | None, tp: dict[str, Tensor],
              stage: int, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """One attention stage; returns the new vertex features and the raw ``q.k`` scores."""
    q = ad.matmul(v_prev, tp[f"stage{stage}.wq"])
    k = ad.matmul(v_prev, tp[f"stage{stage}.wk"])
    v = ad.matmul(v_prev, tp[f"stage{stage}.wv"])
    scores = ad.head_dot(ad.gather_rows(q, graph.src), ad.gather_rows(k, graph.dst), cfg.heads)
    logits = scores
    if cfg.scaled_attention:
        logits = ad.scale(logits, 1.0 / math.sqrt(cfg.head_dim))
    if rse is not None:
        logits = ad.add(logits, rse)
    alpha = ad.segment_softmax(logits, graph.indptr)
    agg = ad.segment_sum(ad.head_weight(alpha, ad.gather_rows(v, graph.dst)), graph.indptr)
    out = ad.mlp_forward(agg, _mlp(tp, f"stage{stage}.mlp"))
    return ad.add(v_prev, out), scores


def cee_aggregate(stage_scores: Sequence[Tensor], stage: int | None = None) -> Tensor:
    """Sum the stage scores, or pass through a single (1-based) stage."""
    shapes = {s.shape for s in stage_scores}
    if len(shapes) != 1:
        raise MismatchedEdgeLists(f"stage score arrays differ in shape: {sorted(shapes)}")
    if stage is not None:
        if not 1 <= stage <= len(stage_scores):
            raise ValueError(f"CEE stage {stage} outside 1..{len(stage_scores)}")
        return stage_scores[stage - 1]
    acc = stage_scores[0]
    for s in stage_scores[1:]:
        acc = ad.add(acc, s)
    return acc


def instance_head(cee: Tensor, vs: Tensor, graph: DrawingGraph, tp: dict[str, Tensor]) -> Tensor:
    """Adjacency logits for every directed edge from ``[c_ij, v_i, v_j]``."""
    feat = ad.concat_lastdim([cee, ad.gather_rows(vs, graph.src), ad.gather_rows(vs, graph.dst)])
    logits = ad.mlp_forward(feat, _mlp(tp, "instance_mlp"))
    return ad.reshape(logits, (graph.num_edges,))


def forward_tape(graph: DrawingGraph, params: dict[str, np.ndarray], cfg: ModelConfig,
                 ablation: Ablation = FULL, requires_grad: bool = True,
                 checked: bool = False, dtype=np.float64) -> TapeOutput:
    tape = Tape(checked=checked, dtype=dtype)
    tp = {k: tape.leaf(v, requires_grad=requires_grad, name=k) for k, v in params.items()}
    vs = embed_inputs(graph, tp, tape)
    rse = rse_encode(graph, tp, tape) if ablation.rse else None
    stage_scores = []
    for s in range(cfg.stages):
        vs, a = gat_stage(vs, graph, rse, tp, s, cfg)
        stage_scores.append(a)
    logits = ad.mlp_forward(vs, _mlp(tp, "semantic_mlp"))
    log_probs = ad.log_softmax_rows(logits)
    if ablation.cee == "off":
        cee = tape.leaf(np.zeros((graph.num_edges, cfg.heads)))
    else:
        cee = cee_aggregate(stage_scores, ablation.cee_stage())
    z_logits = instance_head(cee, vs, graph, tp)
    z = ad.sigmoid(z_logits)
    return TapeOutput(tape, tp, logits, log_probs, stage_scores, rse, cee, z_logits, z, vs)


def forward(graph: DrawingGraph, params: dict[str, np.ndarray], cfg: ModelConfig,
            ablation: Ablation = FULL) -> ForwardOutput:
    out = forward_tape(graph, params, cfg, ablation, requires_grad=False)
    rse = out.rse.value if out.rse is not None else np.zeros((graph.num_edges, cfg.heads))
    return ForwardOutput(
        semantic_logits=out.semantic_logits.value,
        semantic_probs=np.exp(out.semantic_log_probs.value),
        stage_scores=[a.value for a in out.stage_scores],
        rse=rse,
        cee=out.cee.value,
        adjacency_logits=out.adjacency_logits.value,
        adjacency=out.adjacency.value,
        vertex_features=out.vertex_features.value,
    )


# ---------------------------------------------------------------- checkpoints

def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def encode_arrays(arrays: dict[str, np.ndarray]) -> dict:
    return {k: _encode_array(v) for k, v in sorted(arrays.items())}


def decode_arrays(d: dict) -> dict[str, np.ndarray]:
    return {k: _decode_array(v) for k, v in d.items()}


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: dict[str, np.ndarray],
                    extra: dict | None = None):
    """JSON container: config plus little-endian float64 arrays, base64 encoded."""
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "version": CHECKPOINT_VERSION,
        "model_config": cfg.to_json(),
        "params": encode_arrays(params),
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None):
    """Returns ``(config, params, extra)``; rejects a config different from ``expected``."""
    doc = json.loads(Path(path).read_text())
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise VersionMismatch(f"{path} is not a cadspot checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {doc.get('version')} != {CHECKPOINT_VERSION}")
    cfg = ModelConfig.from_json(doc["model_config"])
    if expected is not None and cfg != expected:
        raise ConfigMismatch(f"checkpoint config {cfg} does not match {expected}")
    params = decode_arrays(doc["params"])
    check_params(params, cfg)
    return cfg, params, doc.get("extra", {})
