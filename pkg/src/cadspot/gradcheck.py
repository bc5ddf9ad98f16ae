"""Finite-difference verification of the panoptic loss gradients."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .classes import ClassTable
from .extract import gt_adjacency
from .graph import DrawingGraph, GraphConfig, build_graph
from .model import (
    FULL,
    Ablation,
    ModelConfig,
    _mlp,
    cee_aggregate,
    embed_inputs,
    gat_stage,
    init_params,
    instance_head,
    rse_encode,
)
from .training import (
    TrainConfig,
    instance_loss,
    instance_weights,
    loss_and_grads,
    panoptic_loss,
    semantic_loss,
)

# small enough that every parameter entry is checked in well under a minute
GRADCHECK_MODEL = ModelConfig(stages=2, heads=2, width=32, num_classes=5, init_seed=0)


def _module_of(name: str):
    """Which part of the network a parameter feeds: embed, rse, a stage index, semantic, instance."""
    head = name.split(".")[0]
    if head in ("vertex_mlp", "edge_mlp"):
        return "embed"
    if head == "rse_mlp":
        return "rse"
    if head.startswith("stage"):
        return int(head[5:])
    return {"semantic_mlp": "semantic", "instance_mlp": "instance"}[head]


class PanopticObjective:
    """Panoptic loss as a function of the parameters, in a fixed dtype.

    The forward pass is split at module boundaries and the outputs of every
    module at the base parameters are cached. ``objective(params, name)``
    recomputes only what lies downstream of parameter ``name``, running the
    same operations as a full forward pass on identical inputs, so the result
    is bitwise equal to the uncached loss.
    """

    def __init__(self, graph: DrawingGraph, params: dict[str, np.ndarray], cfg: ModelConfig,
                 classes: ClassTable, train_cfg: TrainConfig = TrainConfig(),
                 ablation: Ablation = FULL, dtype=np.float64):
        self.graph = graph
        self.cfg = cfg
        self.ablation = ablation
        self.dtype = np.dtype(dtype)
        self.lam = train_cfg.lam
        self.zgt = gt_adjacency(graph, classes)
        self.weights = instance_weights(graph, self.zgt, train_cfg.weights)
        self.cache: dict = {}
        self._run(params, None, fill=True)

    def __call__(self, params: dict[str, np.ndarray], name: str | None = None):
        return self._run(params, name, fill=False)

    def _run(self, params, name, fill):
        g, cfg, c = self.graph, self.cfg, self.cache
        tape = Tape(dtype=self.dtype)
        tp = {k: tape.leaf(v, name=k) for k, v in params.items()}
        start = "embed" if fill or name is None else _module_of(name)

        if start == "semantic":
            sem = self._semantic(tape.leaf(c["vs"]), tp)
            return panoptic_loss(sem, tape.leaf(c["ins"]), self.lam).value[()]
        if start == "instance":
            ins = self._instance(tape.leaf(c["cee"]), tape.leaf(c["vs"]), tp, tape)
            return panoptic_loss(tape.leaf(c["sem"]), ins, self.lam).value[()]

        first = start if isinstance(start, int) else 0
        if start == "embed":
            vs = embed_inputs(g, tp, tape)
        else:
            vs = tape.leaf(c["v"][first])
        rse = None
        if self.ablation.rse:
            rse = rse_encode(g, tp, tape) if start in ("embed", "rse") else tape.leaf(c["rse"])
        scores = [tape.leaf(a) for a in c["scores"][:first]] if first else []
        if fill:
            c["v"], c["scores"] = [], []
            c["rse"] = rse.value if rse is not None else None
        for s in range(first, cfg.stages):
            if fill:
                c["v"].append(vs.value)
            vs, a = gat_stage(vs, g, rse, tp, s, cfg)
            scores.append(a)
            if fill:
                c["scores"].append(a.value)
        if self.ablation.cee == "off":
            cee = tape.leaf(np.zeros((g.num_edges, cfg.heads)))
        else:
            cee = cee_aggregate(scores, self.ablation.cee_stage())
        sem = self._semantic(vs, tp)
        ins = self._instance(cee, vs, tp, tape)
        if fill:
            c.update(vs=vs.value, cee=cee.value, sem=sem.value, ins=ins.value)
        return panoptic_loss(sem, ins, self.lam).value[()]

    def _semantic(self, vs, tp):
        return semantic_loss(ad.log_softmax_rows(ad.mlp_forward(vs, _mlp(tp, "semantic_mlp"))),
                             self.graph.semantic)

    def _instance(self, cee, vs, tp, tape):
        return instance_loss(instance_head(cee, vs, self.graph, tp), self.zgt, self.weights)


@dataclass
class GradcheckReport:
    passed: bool
    max_rel_error: float
    worst: str
    analytic: float
    numeric: float
    checked: int
    skipped: int
    refined: int
    num_vertices: int
    num_edges: int
    seconds: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"gradcheck {status}: max rel error {self.max_rel_error:.3e} at {self.worst} "
                f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e}); "
                f"{self.checked} entries, {self.refined} refined in extended precision, "
                f"N={self.num_vertices} E={self.num_edges}, {self.seconds:.1f}s")


def gradcheck(graph: DrawingGraph, classes: ClassTable, cfg: ModelConfig = GRADCHECK_MODEL,
              params: dict[str, np.ndarray] | None = None, train_cfg: TrainConfig = TrainConfig(),
              ablation: Ablation = FULL, h: float = 1e-5, rel_tol: float = 1e-4,
              names=None) -> GradcheckReport:
    """Check every parameter entry's analytic gradient against central differences."""
    t0 = time.perf_counter()
    if params is None:
        params = init_params(cfg)
    analytic = loss_and_grads(graph, params, cfg, classes, train_cfg, ablation).grads
    f = PanopticObjective(graph, params, cfg, classes, train_cfg, ablation, np.float64)
    fine = PanopticObjective(graph, params, cfg, classes, train_cfg, ablation, np.longdouble)
    res = ad.finite_difference_check(f, params, analytic, h=h, rel_tol=rel_tol, names=names,
                                     precise=fine)
    return GradcheckReport(
        passed=bool(res["passed"]),
        max_rel_error=float(res["max_rel_error"]),
        worst=f"{res['name']}{list(res['index'])}",
        analytic=float(res["analytic"]),
        numeric=float(res["numeric"]),
        checked=res["checked"],
        skipped=res["skipped"],
        refined=res["refined"],
        num_vertices=graph.num_vertices,
        num_edges=graph.num_edges,
        seconds=time.perf_counter() - t0,
    )


def gradcheck_fixture_graph(seed: int = 0, graph_cfg: GraphConfig = GraphConfig()):
    """The twelve-primitive synthetic drawing and its class table."""
    from .data.synth import SyntheticSpec, tiny_record

    rec = tiny_record(seed)
    return build_graph(rec.primitives, graph_cfg), SyntheticSpec().class_table()
