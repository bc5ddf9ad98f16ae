"""Losses, optimiser, training loop and evaluation."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .classes import ClassTable
from .errors import ShapeMismatch
from .extract import extract, ground_truth, gt_adjacency
from .graph import DrawingGraph
from .metrics import PQAccumulator, detection_ap, detections_from, f1_counts
from .model import (
    FULL,
    Ablation,
    ModelConfig,
    decode_arrays,
    encode_arrays,
    forward,
    forward_tape,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger(__name__)

build_gt_adjacency = gt_adjacency


@dataclass(frozen=True)
class InstanceWeightTable:
    same_class_diff_inst: float = 20.0
    same_class_same_inst: float = 2.0
    diff_class_not_adjacent: float = 1.0
    diff_class_adjacent: float = 0.0

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise ValueError("instance loss weights must be non-negative")

    def lookup(self, same_class, zgt) -> np.ndarray:
        same_class = np.asarray(same_class, dtype=bool)
        zgt = np.asarray(zgt) > 0.5
        return np.where(same_class,
                        np.where(zgt, self.same_class_same_inst, self.same_class_diff_inst),
                        np.where(zgt, self.diff_class_adjacent, self.diff_class_not_adjacent))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.99
    decay: float = 0.7
    decay_every: int = 20
    epochs: int = 100
    lam: float = 2.0
    adam_epsilon: float = 1e-8
    rng_seed: int = 0
    prune_threshold: float = 0.7
    weights: InstanceWeightTable = field(default_factory=InstanceWeightTable)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("weights"), dict):
            d["weights"] = InstanceWeightTable(**d["weights"])
        return cls(**d)


# ---------------------------------------------------------------- losses

def semantic_loss(log_probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of the true class (cross-entropy on ``Y``)."""
    labels = np.asarray(labels, dtype=np.int64)
    c = log_probs.shape[1]
    if labels.shape != (log_probs.shape[0],):
        raise ShapeMismatch(f"{len(labels)} labels for {log_probs.shape[0]} vertices")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"semantic label outside [0, {c})")
    return ad.scale(ad.mean(ad.pick_rows(log_probs, labels)), -1.0)


def instance_weights(graph: DrawingGraph, zgt: np.ndarray,
                     table: InstanceWeightTable = InstanceWeightTable()) -> np.ndarray:
    same = graph.semantic[graph.src] == graph.semantic[graph.dst]
    return table.lookup(same, zgt)


def instance_loss(z_logits: Tensor, zgt: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted BCE over directed edges, normalised by the total weight."""
    wsum = float(np.sum(weights))
    bce = ad.bce_with_logits(z_logits, zgt)
    if wsum == 0:
        return ad.scale(ad.weighted_sum(bce, np.zeros_like(weights)), 0.0)
    return ad.weighted_sum(bce, np.asarray(weights, dtype=float) / wsum)


def panoptic_loss(sem: Tensor, ins: Tensor, lam: float) -> Tensor:
    return ad.add(sem, ad.scale(ins, lam))


@dataclass
class LossResult:
    loss: float
    semantic: float
    instance: float
    grads: dict[str, np.ndarray]


def _loss_tape(graph, params, cfg, classes, train_cfg, ablation, requires_grad, dtype=np.float64):
    out = forward_tape(graph, params, cfg, ablation, requires_grad=requires_grad, dtype=dtype)
    zgt = gt_adjacency(graph, classes)
    sem = semantic_loss(out.semantic_log_probs, graph.semantic)
    ins = instance_loss(out.adjacency_logits, zgt, instance_weights(graph, zgt, train_cfg.weights))
    return out, sem, ins, panoptic_loss(sem, ins, train_cfg.lam)


def loss_and_grads(graph: DrawingGraph, params: dict[str, np.ndarray], cfg: ModelConfig,
                   classes: ClassTable, train_cfg: TrainConfig = TrainConfig(),
                   ablation: Ablation = FULL, with_grads: bool = True) -> LossResult:
    out, sem, ins, total = _loss_tape(graph, params, cfg, classes, train_cfg, ablation, with_grads)
    grads = out.tape.gradients(total, out.params) if with_grads else {}
    return LossResult(float(total.value), float(sem.value), float(ins.value), grads)


def panoptic_objective(graph: DrawingGraph, params: dict[str, np.ndarray], cfg: ModelConfig,
                       classes: ClassTable, train_cfg: TrainConfig = TrainConfig(),
                       ablation: Ablation = FULL, dtype=np.float64):
    """Panoptic loss value computed entirely in ``dtype`` (no gradients)."""
    return _loss_tape(graph, params, cfg, classes, train_cfg, ablation, False, dtype)[3].value[()]


# ---------------------------------------------------------------- optimiser

def learning_rate(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    return cfg.lr * cfg.decay ** (epoch // cfg.decay_every)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)

    def to_json(self) -> dict:
        return {"step": self.step, "m": encode_arrays(self.m), "v": encode_arrays(self.v)}

    @classmethod
    def from_json(cls, d: dict) -> "OptimizerState":
        return cls(decode_arrays(d["m"]), decode_arrays(d["v"]), int(d["step"]))


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState,
              cfg: TrainConfig, epoch: int) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update at the epoch's decayed learning rate (in place)."""
    lr = learning_rate(epoch, cfg)
    state.step += 1
    t = state.step
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_epsilon)
    return params


# ---------------------------------------------------------------- evaluation

def predict(graph: DrawingGraph, params, cfg: ModelConfig, classes: ClassTable,
            ablation: Ablation = FULL, prune_threshold: float = 0.7):
    out = forward(graph, params, cfg, ablation)
    return extract(out.semantic_probs, out.adjacency, graph, classes, prune_threshold)


def evaluate_predictions(graphs: Sequence[DrawingGraph], predictions, classes: ClassTable) -> dict:
    """Fold PQ/SQ/RQ, F1 pair, AP triple and accuracy over drawings in order."""
    acc = PQAccumulator()
    plain = f1_counts([], [], [], classes.background)
    weighted = f1_counts([], [], [], classes.background)
    dets, gdets = [], []
    correct = total = 0
    for k, (g, pred) in enumerate(zip(graphs, predictions)):
        gt = ground_truth(g, classes)
        acc.add(pred.symbols, gt.symbols, g.lengths)
        for counts, w in ((plain, np.ones(g.num_vertices)), (weighted, g.lengths)):
            c = f1_counts(pred.vertex_classes, g.semantic, w, classes.background)
            counts.tp += c.tp
            counts.fp += c.fp
            counts.fn += c.fn
        dets += detections_from(pred.instances, k)
        gdets += detections_from(gt.instances, k)
        correct += int(np.sum(pred.vertex_classes == g.semantic))
        total += g.num_vertices
    report = acc.result(classes)
    f1, deg1 = plain.f1()
    wf1, deg2 = weighted.f1()
    report.update({"F1": f1, "length_weighted_F1": wf1, "F1_degenerate": deg1 or deg2,
                   "semantic_accuracy": correct / total if total else 0.0})
    report.update(detection_ap(dets, gdets))
    return report


def evaluate(graphs: Sequence[DrawingGraph], params, cfg: ModelConfig, classes: ClassTable,
             ablation: Ablation = FULL, prune_threshold: float = 0.7, workers: int = 1) -> dict:
    def run(g):
        return predict(g, params, cfg, classes, ablation, prune_threshold)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            preds = list(pool.map(run, graphs))
    else:
        preds = [run(g) for g in graphs]
    return evaluate_predictions(graphs, preds, classes)


# ---------------------------------------------------------------- training loop

@dataclass
class TrainState:
    params: dict[str, np.ndarray]
    opt: OptimizerState
    epoch: int = 0  # next epoch to run
    best_pq: float = -1.0
    best_epoch: int = -1
    best_params: dict[str, np.ndarray] | None = None


def save_train_state(path, cfg: ModelConfig, state: TrainState, train_cfg: TrainConfig,
                     ablation: Ablation):
    save_checkpoint(path, cfg, state.params, {
        "optimizer": state.opt.to_json(), "epoch": state.epoch, "best_pq": state.best_pq,
        "best_epoch": state.best_epoch, "train_config": train_cfg.to_json(),
        "ablation": asdict(ablation)})


def load_train_state(path, cfg: ModelConfig | None = None) -> tuple[ModelConfig, TrainState]:
    mcfg, params, extra = load_checkpoint(path, cfg)
    opt = (OptimizerState.from_json(extra["optimizer"]) if "optimizer" in extra
           else OptimizerState.zeros_like(params))
    return mcfg, TrainState(params, opt, int(extra.get("epoch", 0)),
                            float(extra.get("best_pq", -1.0)), int(extra.get("best_epoch", -1)))


def train(train_graphs: Sequence[DrawingGraph], cfg: ModelConfig, classes: ClassTable,
          train_cfg: TrainConfig = TrainConfig(), val_graphs: Sequence[DrawingGraph] | None = None,
          ablation: Ablation = FULL, out_dir: str | Path | None = None,
          state: TrainState | None = None, epochs: int | None = None,
          eval_every: int = 1) -> tuple[TrainState, list[dict]]:
    """One Adam step per drawing; validation PQ after each epoch selects the best model.

    Passing a ``state`` loaded from ``last.ckpt`` resumes exactly where that
    run stopped. ``epochs`` overrides ``train_cfg.epochs`` as the final epoch.
    """
    if not train_graphs:
        raise ValueError("training split is empty")
    from .model import init_params

    if state is None:
        params = init_params(cfg)
        state = TrainState(params, OptimizerState.zeros_like(params))
    val = list(val_graphs) if val_graphs is not None else list(train_graphs)
    end = train_cfg.epochs if epochs is None else epochs
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    history = []
    while state.epoch < end:
        epoch = state.epoch
        order = np.random.default_rng((train_cfg.rng_seed, epoch)).permutation(len(train_graphs))
        sem_sum = ins_sum = 0.0
        for i in order:
            res = loss_and_grads(train_graphs[i], state.params, cfg, classes, train_cfg, ablation)
            if not math.isfinite(res.loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            adam_step(state.params, res.grads, state.opt, train_cfg, epoch)
            sem_sum += res.semantic
            ins_sum += res.instance
        record = {"epoch": epoch, "lr": learning_rate(epoch, train_cfg),
                  "train_loss_sem": sem_sum / len(order), "train_loss_ins": ins_sum / len(order)}
        evaluated = (epoch + 1) % eval_every == 0 or epoch + 1 == end
        if evaluated:
            rep = evaluate(val, state.params, cfg, classes, ablation, train_cfg.prune_threshold)
            record.update(val_PQ=rep["PQ"], val_SQ=rep["SQ"], val_RQ=rep["RQ"])
        state.epoch = epoch + 1
        improved = evaluated and rep["PQ"] > state.best_pq
        if improved:
            state.best_pq = rep["PQ"]
            state.best_epoch = epoch
            state.best_params = {k: v.copy() for k, v in state.params.items()}
        history.append(record)
        log.info("epoch %d %s", epoch, json.dumps(record))
        if out is not None:
            with open(out / "log.jsonl", "a") as fh:
                fh.write(json.dumps(record) + "\n")
            if improved:
                save_checkpoint(out / "best.ckpt", cfg, state.params,
                                {"epoch": epoch, "val_PQ": rep["PQ"], "ablation": asdict(ablation)})
            save_train_state(out / "last.ckpt", cfg, state, train_cfg, ablation)
    return state, history
