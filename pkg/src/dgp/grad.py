"""Loss, reverse-mode gradients and Adam training for relaxed trees."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .dst import DiffSymbolicTree
from .errors import DegenerateTargetError

SENTINEL = 1e12


@dataclass(frozen=True)
class LossConfig:
    lambda_01: float = 0.1

    def __post_init__(self):
        if self.lambda_01 < 0:
            raise ValueError("lambda_01 must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int | None = None  # None -> min(n_train, 256)
    lr_node: float = 0.005
    lr_edge: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batches_per_epoch: int = 1

    def resolved_batch_size(self, n: int) -> int:
        return min(n, 256) if self.batch_size is None else min(self.batch_size, n)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "AdamState":
        return cls(np.zeros(params.size), np.zeros(params.size), 0)


# ---------------------------------------------------------------- losses

def nrmse(y, y_pred) -> float:
    """RMSE divided by the population standard deviation of ``y``."""
    y = np.asarray(y, dtype=float)
    p = np.asarray(y_pred, dtype=float)
    if y.shape != p.shape or y.size < 2:
        raise ValueError("nrmse needs two equal-length vectors with n >= 2")
    sigma = y.std()
    if sigma == 0:
        raise DegenerateTargetError("degenerate target: zero variance")
    p = np.where(np.isfinite(p), p, SENTINEL)
    return float(np.sqrt(np.mean((y - p) ** 2)) / sigma)


def loss_01(w_rows) -> float:
    """Mean over rows of -(1/L) * sum_j (w_j - 0.5)^2."""
    W = np.atleast_2d(np.asarray(w_rows, dtype=float))
    return float(np.mean(-np.mean((W - 0.5) ** 2, axis=1)))


def total_loss(dst: DiffSymbolicTree, X, y, cfg: LossConfig = LossConfig()) -> float:
    from .dst import predict

    return nrmse(y, predict(dst, X)) + cfg.lambda_01 * loss_01(dst.node_matrix.weights())


# ---------------------------------------------------------------- tape

@dataclass
class Tape:
    """Saved state of one batched forward + loss pass.

    ``entries`` lists the recorded operations in execution order: the two
    parameter maps, one fused mixing op per node (children before parents)
    and the loss.  ``backward`` walks them in reverse.
    """

    dst: DiffSymbolicTree
    X: np.ndarray
    y: np.ndarray
    lambda_01: float
    W: np.ndarray
    a: np.ndarray
    R: np.ndarray
    nrmse: float
    loss01: float
    entries: list = field(default_factory=list)

    @property
    def loss(self) -> float:
        return self.nrmse + self.lambda_01 * self.loss01


def record(dst: DiffSymbolicTree, X, y, cfg: LossConfig = LossConfig()) -> Tape:
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if y.std() == 0:
        raise DegenerateTargetError("degenerate target: zero variance")
    W = dst.node_matrix.weights()
    a = K.sigmoid(dst.adjacency.edge_logits)
    R = K.forward(*dst.structure, W, a, X, dst.scale_binary_inputs)
    nr, _ = K.nrmse_and_grad(y, R[0])
    entries = [("softmax",), ("sigmoid",)]
    entries += [("mix", i) for i in range(dst.K - 1, -1, -1)]
    entries.append(("loss",))
    return Tape(dst, X, y, cfg.lambda_01, W, a, R, nr, loss_01(W), entries)


def softmax_backward(W: np.ndarray, gW: np.ndarray) -> np.ndarray:
    return W * (gW - np.sum(W * gW, axis=1, keepdims=True))


def sigmoid_backward(a, ga):
    return np.asarray(a) * (1 - np.asarray(a)) * np.asarray(ga)


def backward(tape: Tape, seed: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the recorded loss w.r.t. node logits (K x L) and edge logits (K,)."""
    dst = tape.dst
    _, g_root = K.nrmse_and_grad(tape.y, tape.R[0])
    gW, ga = K.backward(*dst.structure, tape.W, tape.a, tape.X, tape.R, seed * g_root,
                        dst.scale_binary_inputs)
    _, g01 = K.loss01_and_grad(tape.W)
    gW = gW + seed * tape.lambda_01 * g01
    g_logits = softmax_backward(tape.W, gW)
    g_edges = sigmoid_backward(tape.a, ga)
    g_edges[0] = 0.0  # the root has no parent edge
    return g_logits, g_edges


def value_and_grad(dst: DiffSymbolicTree, X, y, cfg: LossConfig = LossConfig()):
    """Fused compiled path: (loss, grad_logits, grad_edges)."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    total, _, _, gl, gv = K.value_and_grad(*dst.structure, dst.node_matrix.logits,
                                           dst.adjacency.edge_logits, X, y, cfg.lambda_01,
                                           dst.scale_binary_inputs)
    return total, gl, gv


# ---------------------------------------------------------------- optimiser

def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam descent step; returns new (params, state)."""
    p = np.array(params, dtype=float).reshape(-1)
    g = np.ascontiguousarray(grads, dtype=float).reshape(-1)
    if p.shape != g.shape:
        raise ValueError("params and grads differ in shape")
    new = AdamState(state.m.copy(), state.v.copy(), state.step + 1)
    K.adam_update(p, g, new.m, new.v, new.step, lr, beta1, beta2, eps)
    return p.reshape(np.shape(params)), new


@dataclass
class TrainResult:
    dst: DiffSymbolicTree
    history: np.ndarray  # (epochs, 3): nrmse, loss01, total
    node_state: AdamState
    edge_state: AdamState

    @property
    def losses(self) -> np.ndarray:
        return self.history[:, 2]


def train_dst(dst: DiffSymbolicTree, X, y, tc: TrainConfig = TrainConfig(),
              lc: LossConfig = LossConfig(), rng: np.random.Generator | None = None,
              epochs: int | None = None) -> TrainResult:
    """Adam on node and edge logits; one shuffled batch per step.

    Returns a trained copy; ``dst`` itself is left untouched.
    """
    rng = rng if rng is not None else np.random.default_rng()
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n = len(y)
    E = tc.epochs if epochs is None else epochs
    nb = tc.resolved_batch_size(n)
    steps = E * tc.batches_per_epoch
    batches = rng.permuted(np.tile(np.arange(n, dtype=np.int64), (steps, 1)), axis=1)[:, :nb]
    batches = np.ascontiguousarray(batches)
    if nb < 2 or np.any(y[batches].std(axis=1) == 0):
        raise DegenerateTargetError("degenerate target: a training batch has zero variance")
    out = dst.copy()
    logits = out.node_matrix.logits
    v = out.adjacency.edge_logits
    ns = AdamState.zeros_like(logits)
    es = AdamState.zeros_like(v)
    hist = K.train_loop(*out.structure, logits, v, X, y, batches, lc.lambda_01,
                        tc.lr_node, tc.lr_edge, tc.beta1, tc.beta2, tc.eps,
                        out.scale_binary_inputs, ns.m, ns.v, es.m, es.v, 0)
    ns.step = es.step = steps
    if tc.batches_per_epoch > 1:
        hist = hist.reshape(E, tc.batches_per_epoch, 3).mean(axis=1)
    return TrainResult(out, hist, ns, es)


def write_trajectory_csv(path, history: np.ndarray) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "nrmse", "loss01", "total"])
        for e, (nr, l01, tot) in enumerate(np.asarray(history), start=1):
            w.writerow([e, repr(float(nr)), repr(float(l01)), repr(float(tot))])
