"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every differentiable value is a :class:`Tensor` recorded on a :class:`Tape`.
Operations are plain functions (``matmul``, ``relu``, ``segment_softmax``...)
that append a node holding a backward closure. :meth:`Tape.backward` walks
the nodes in reverse insertion order, so gradient accumulation is
deterministic.

Edge-indexed ("sparse") operations take a CSR ``indptr`` array: edges are
grouped by source vertex, and segment ``i`` is ``indptr[i]:indptr[i + 1]``.
"""

from __future__ import annotations

import logging
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonFiniteValue, NonScalarLoss, ShapeMismatch

log = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("value", "requires_grad", "tape", "node_id", "parents", "backward_fn", "name")

    def __init__(self, value, tape: "Tape", requires_grad=False, parents=(), backward_fn=None,
                 name=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name
        self.node_id = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, node={self.node_id})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of tensors; one tape per forward/backward pass.

    With ``checked=True`` every created value is tested for NaN/Inf. ``dtype``
    is float64 for normal use; the gradient checker evaluates forward passes
    in ``np.longdouble``.
    """

    def __init__(self, checked: bool = False, dtype=np.float64):
        self.nodes: list[Tensor] = []
        self.checked = checked
        self.dtype = np.dtype(dtype)

    def _register(self, t: Tensor) -> Tensor:
        if self.checked and not np.all(np.isfinite(t.value)):
            raise NonFiniteValue(f"non-finite value in {t!r}")
        t.node_id = len(self.nodes)
        self.nodes.append(t)
        return t

    def leaf(self, value, requires_grad: bool = False, name: str | None = None) -> Tensor:
        value = np.asarray(value, dtype=self.dtype)
        if value.ndim > 3:
            raise ShapeMismatch(f"tensors have at most 3 dimensions, got {value.shape}")
        return self._register(Tensor(value, self, requires_grad, name=name))

    def op(self, value: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
        for p in parents:
            if p.tape is not self:
                raise ValueError("tensors from different tapes cannot be combined")
        needs = any(p.requires_grad for p in parents)
        return self._register(Tensor(value, self, needs, tuple(parents), backward_fn if needs else None))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of scalar ``loss`` keyed by ``node_id`` for every reachable tensor."""
        if loss.value.size != 1:
            raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.node_id + 1]):
            g = grads.get(node.node_id)
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.node_id)
                grads[parent.node_id] = pg if prev is None else prev + pg
        return grads

    def gradients(self, loss: Tensor, wrt: dict[str, Tensor]) -> dict[str, np.ndarray]:
        """Named gradients; tensors unreachable from ``loss`` get zeros."""
        raw = self.backward(loss)
        return {k: raw.get(t.node_id, np.zeros_like(t.value)) for k, t in wrt.items()}


# ---------------------------------------------------------------- helpers

def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _segments(indptr: np.ndarray):
    """Start offsets of the non-empty segments and the mask of non-empty rows."""
    nonempty = indptr[1:] > indptr[:-1]
    return indptr[:-1][nonempty], nonempty


def _segment_ids(indptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))


def _check_edges(values: np.ndarray, indptr: np.ndarray, op: str):
    if values.shape[0] != indptr[-1]:
        raise ShapeMismatch(f"{op}: {values.shape[0]} edge rows but indptr covers {indptr[-1]}")


# ---------------------------------------------------------------- dense ops

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.value + b.value
    except ValueError as exc:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from exc
    return a.tape.op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.value * b.value
    except ValueError as exc:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from exc
    return a.tape.op(out, (a, b), lambda g: (_unbroadcast(g * b.value, a.shape),
                                             _unbroadcast(g * a.value, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return a.tape.op(a.value * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    return a.tape.op(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def concat_lastdim(tensors: Sequence[Tensor]) -> Tensor:
    lead = {t.shape[:-1] for t in tensors}
    if len(lead) != 1:
        raise ShapeMismatch(f"concat: leading shapes differ {[t.shape for t in tensors]}")
    widths = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(widths)[:-1]
    out = np.concatenate([t.value for t in tensors], axis=-1)
    return tensors[0].tape.op(out, tuple(tensors), lambda g: np.split(g, cuts, axis=-1))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    return a.tape.op(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0
    return a.tape.op(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)
    return a.tape.op(y, (a,), lambda g: (g * y * (1.0 - y),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softmax_rows(a: Tensor) -> Tensor:
    y = _softmax(a.value)
    return a.tape.op(y, (a,), lambda g: (y * (g - np.sum(g * y, axis=-1, keepdims=True)),))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_rows(a: Tensor) -> Tensor:
    x = a.value
    shifted = x - x.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return a.tape.op(out, (a,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def pick_rows(a: Tensor, cols: np.ndarray) -> Tensor:
    """``out[i] = a[i, cols[i]]``."""
    rows = np.arange(a.shape[0])
    cols = np.asarray(cols)

    def back(g):
        ga = np.zeros_like(a.value)
        ga[rows, cols] = g
        return (ga,)

    return a.tape.op(a.value[rows, cols], (a,), back)


def total(a: Tensor) -> Tensor:
    return a.tape.op(np.asarray(a.value.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    n = a.value.size
    return a.tape.op(np.asarray(a.value.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def weighted_sum(a: Tensor, w: np.ndarray) -> Tensor:
    """``sum(a * w)`` for a constant weight array."""
    w = np.asarray(w, dtype=float)
    return a.tape.op(np.asarray(np.sum(a.value * w)), (a,), lambda g: (float(g) * w,))


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Elementwise binary cross-entropy of ``sigmoid(logits)`` against 0/1 targets."""
    x = logits.value
    t = np.asarray(targets, dtype=float)
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    y = _sigmoid(x)
    return logits.tape.op(loss, (logits,), lambda g: (g * (y - t),))


# ---------------------------------------------------------------- graph ops

def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Per-edge copies of vertex rows, ``out[e] = x[idx[e]]``."""
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]

    def back(g):
        flat = g.reshape(len(idx), -1)
        gx = np.zeros((n, flat.shape[1]), dtype=g.dtype)
        np.add.at(gx, idx, flat)
        return (gx.reshape(x.shape),)

    return x.tape.op(x.value[idx], (x,), back)


def gather_pairs(x: Tensor, src: np.ndarray, dst: np.ndarray) -> tuple[Tensor, Tensor]:
    return gather_rows(x, src), gather_rows(x, dst)


def segment_sum(values: Tensor, indptr: np.ndarray) -> Tensor:
    """Sum edge rows into their source vertex; empty segments give zeros."""
    _check_edges(values.value, indptr, "segment_sum")
    n = len(indptr) - 1
    starts, nonempty = _segments(indptr)
    ids = _segment_ids(indptr)
    out = np.zeros((n,) + values.shape[1:], dtype=values.value.dtype)
    if len(starts):
        out[nonempty] = np.add.reduceat(values.value, starts, axis=0)
    return values.tape.op(out, (values,), lambda g: (g[ids],))


def segment_max_pool(values: Tensor, indptr: np.ndarray) -> Tensor:
    """Column-wise max over each vertex's edges (``E x F -> N x F``).

    Empty segments pool to zero. The gradient goes to exactly one edge per
    vertex and channel: the lowest-index edge attaining the max.
    """
    _check_edges(values.value, indptr, "segment_max_pool")
    v = values.value
    n = len(indptr) - 1
    starts, nonempty = _segments(indptr)
    ids = _segment_ids(indptr)
    out = np.zeros((n,) + v.shape[1:], dtype=v.dtype)
    argmax = np.zeros((len(starts),) + v.shape[1:], dtype=np.int64)
    if len(starts):
        mx = np.maximum.reduceat(v, starts, axis=0)
        out[nonempty] = mx
        e_idx = np.broadcast_to(np.arange(len(v)).reshape((-1,) + (1,) * (v.ndim - 1)), v.shape)
        cand = np.where(v == out[ids], e_idx, len(v))
        argmax = np.minimum.reduceat(cand, starts, axis=0)
    if len(starts) < n:
        log.debug("segment_max_pool: %d empty segments pooled to zero", n - len(starts))

    def back(g):
        gv = np.zeros_like(v)
        if len(starts):
            cols = np.broadcast_to(np.arange(v.shape[1]), argmax.shape)
            np.add.at(gv, (argmax, cols), g[nonempty])
        return (gv,)

    return values.tape.op(out, (values,), back)


def segment_softmax(scores: Tensor, indptr: np.ndarray) -> Tensor:
    """Softmax of ``E x H`` edge scores over each source vertex's edges, per head."""
    _check_edges(scores.value, indptr, "segment_softmax")
    s = scores.value
    starts, _ = _segments(indptr)
    ids = _segment_ids(indptr)
    n = len(indptr) - 1
    if not len(starts):
        return scores.tape.op(s.copy(), (scores,), lambda g: (np.zeros_like(g),))
    seg_max = np.zeros((n,) + s.shape[1:], dtype=s.dtype)
    nonempty = indptr[1:] > indptr[:-1]
    seg_max[nonempty] = np.maximum.reduceat(s, starts, axis=0)
    e = np.exp(s - seg_max[ids])
    denom = np.zeros_like(seg_max)
    denom[nonempty] = np.add.reduceat(e, starts, axis=0)
    y = e / denom[ids]

    def back(g):
        gy = g * y
        acc = np.zeros_like(seg_max)
        acc[nonempty] = np.add.reduceat(gy, starts, axis=0)
        return (gy - y * acc[ids],)

    return scores.tape.op(y, (scores,), back)


row_softmax_over_neighbors = segment_softmax


def head_dot(a: Tensor, b: Tensor, heads: int) -> Tensor:
    """Per-row, per-head dot products: ``(R x H*d, R x H*d) -> R x H``."""
    if a.shape != b.shape or a.shape[1] % heads:
        raise ShapeMismatch(f"head_dot: {a.shape} vs {b.shape} with {heads} heads")
    r, w = a.shape
    d = w // heads
    av = a.value.reshape(r, heads, d)
    bv = b.value.reshape(r, heads, d)
    out = np.einsum("rhd,rhd->rh", av, bv)

    def back(g):
        g3 = g[:, :, None]
        return (g3 * bv).reshape(r, w), (g3 * av).reshape(r, w)

    return a.tape.op(out, (a, b), back)


def head_weight(alpha: Tensor, v: Tensor) -> Tensor:
    """Scale each head block of ``v`` (``R x H*d``) by ``alpha`` (``R x H``)."""
    r, heads = alpha.shape
    if v.shape[0] != r or v.shape[1] % heads:
        raise ShapeMismatch(f"head_weight: {alpha.shape} vs {v.shape}")
    d = v.shape[1] // heads
    v3 = v.value.reshape(r, heads, d)
    out = (v3 * alpha.value[:, :, None]).reshape(r, heads * d)

    def back(g):
        g3 = g.reshape(r, heads, d)
        return np.einsum("rhd,rhd->rh", g3, v3), (g3 * alpha.value[:, :, None]).reshape(r, heads * d)

    return alpha.tape.op(out, (alpha, v), back)


# ---------------------------------------------------------------- networks

def mlp_forward(x: Tensor, layers: Sequence[tuple[Tensor, Tensor]]) -> Tensor:
    """Affine layers with relu between them and no activation after the last."""
    if x.shape[-1] != layers[0][0].shape[0]:
        raise ShapeMismatch(f"mlp input width {x.shape[-1]} != {layers[0][0].shape[0]}")
    for k, (w, b) in enumerate(layers):
        x = add(matmul(x, w), b)
        if k < len(layers) - 1:
            x = relu(x)
    return x


# ---------------------------------------------------------------- checking

def _central_difference(f, work, name, idx, step):
    arr = work[name]
    orig = arr[idx]
    arr[idx] = orig + step
    up = arr[idx]
    fp = f(work, name)
    arr[idx] = orig - step
    down = arr[idx]
    fm = f(work, name)
    arr[idx] = orig
    return float((fp - fm) / (up - down))


def finite_difference_check(f: Callable[[dict[str, np.ndarray], str], float],
                            params: dict[str, np.ndarray],
                            analytic: dict[str, np.ndarray],
                            h: float = 1e-5,
                            rel_tol: float = 1e-4,
                            names: Iterable[str] | None = None,
                            skip: Callable[[str, tuple], bool] | None = None,
                            precise: Callable[[dict[str, np.ndarray], str], float] | None = None,
                            precise_dtype=np.longdouble,
                            refine_fraction: float = 0.1) -> dict:
    """Compare analytic gradients with central differences, entry by entry.

    ``f(params, name)`` returns the scalar objective; ``name`` is the array
    currently perturbed, so ``f`` may reuse work that does not depend on it.
    The relative error of one entry is
    ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.

    Float64 difference quotients carry roundoff of order ``eps * |f| / h``,
    which swamps small gradients. When ``precise`` is given (an objective
    evaluated in ``precise_dtype``), every entry whose float64 error exceeds
    ``refine_fraction * rel_tol`` is recomputed with it and the refined
    value is the one reported. Entries for which ``skip(name, index)`` is
    true (for example relu kinks) are excluded.
    """
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    fine = None
    if precise is not None:
        fine = {k: np.array(v, dtype=precise_dtype, copy=True) for k, v in params.items()}
    step = np.float64(h)
    fine_step = np.asarray(h, dtype=precise_dtype)
    worst = {"max_rel_error": 0.0, "name": None, "index": None, "analytic": None, "numeric": None}
    checked = skipped = refined = 0

    def rel(a, b):
        return abs(a - b) / max(1e-8, abs(a) + abs(b))

    for name in (names or list(work)):
        for idx in np.ndindex(work[name].shape):
            if skip is not None and skip(name, idx):
                skipped += 1
                continue
            g_ad = float(analytic[name][idx])
            g_fd = _central_difference(f, work, name, idx, step)
            err = rel(g_ad, g_fd)
            if fine is not None and err > refine_fraction * rel_tol:
                g_fd = _central_difference(precise, fine, name, idx, fine_step)
                err = rel(g_ad, g_fd)
                refined += 1
            checked += 1
            if err > worst["max_rel_error"] or worst["name"] is None:
                worst.update(max_rel_error=err, name=name, index=idx, analytic=g_ad, numeric=g_fd)
    worst["checked"] = checked
    worst["skipped"] = skipped
    worst["refined"] = refined
    worst["passed"] = worst["max_rel_error"] <= rel_tol
    return worst
