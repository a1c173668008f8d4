"""Differentiable symbolic trees: a fixed topology with learnable node and edge logits."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from . import _kernels as K
from .expr import Kind, PrimitiveSet, SymbolicTree, _apply


@dataclass(frozen=True)
class InitConfig:
    hot_logit: float = 4.0
    edge_logit: float = 2.0
    # binary operators see adjacency-scaled child outputs (False: raw outputs)
    scale_binary_inputs: bool = True


class NodeMatrix:
    """K x L logits; ``weights()`` is the row softmax."""

    def __init__(self, logits: np.ndarray):
        self.logits = np.ascontiguousarray(logits, dtype=float)

    @property
    def shape(self):
        return self.logits.shape

    def weights(self, temperature: float = 1.0) -> np.ndarray:
        return K.softmax_rows(self.logits, temperature)


class AdjacencyMatrix:
    """Edge logits stored per child (each non-root node has exactly one parent)."""

    def __init__(self, parents: Sequence[int | None], edge_logits: np.ndarray):
        self.parents = tuple(parents)
        self.edge_logits = np.ascontiguousarray(edge_logits, dtype=float)

    def strengths(self) -> np.ndarray:
        """sigmoid(v) per child; the root entry is meaningless and reported as 0."""
        a = K.sigmoid(self.edge_logits)
        a[0] = 0.0
        return a

    def strength(self, i: int, j: int) -> float:
        if self.parents[i] != j:
            return 0.0
        return float(K.sigmoid(self.edge_logits[i:i + 1])[0])

    def matrix(self) -> np.ndarray:
        """Dense K x K matrix with A[child, parent] = sigmoid(v)."""
        n = len(self.parents)
        A = np.zeros((n, n))
        a = self.strengths()
        for i, p in enumerate(self.parents):
            if p is not None:
                A[i, p] = a[i]
        return A

    def edges(self) -> list[tuple[int, int]]:
        return [(i, p) for i, p in enumerate(self.parents) if p is not None]


@dataclass
class DiffSymbolicTree:
    tree: SymbolicTree
    node_matrix: NodeMatrix
    adjacency: AdjacencyMatrix
    primitive_set: PrimitiveSet
    scale_binary_inputs: bool = True

    @property
    def K(self) -> int:
        return self.tree.K

    @cached_property
    def structure(self):
        """Topology and column arrays in the layout the kernels expect."""
        t = self.tree
        arity = np.array([p.arity for p in t.prims], dtype=np.int64)
        c1 = np.array([c[0] if len(c) > 0 else -1 for c in t.children], dtype=np.int64)
        c2 = np.array([c[1] if len(c) > 1 else -1 for c in t.children], dtype=np.int64)
        kinds = np.array([int(p.kind) for p in self.primitive_set.primitives], dtype=np.int64)
        cvar = np.array([p.index for p in self.primitive_set.primitives], dtype=np.int64)
        return arity, c1, c2, kinds, cvar

    def copy(self) -> "DiffSymbolicTree":
        return DiffSymbolicTree(
            self.tree, NodeMatrix(self.node_matrix.logits.copy()),
            AdjacencyMatrix(self.adjacency.parents, self.adjacency.edge_logits.copy()),
            self.primitive_set, self.scale_binary_inputs)


def relax(t: SymbolicTree, ps: PrimitiveSet, init: InitConfig = InitConfig()) -> DiffSymbolicTree:
    logits = np.zeros((t.K, ps.L))
    for i, p in enumerate(t.prims):
        logits[i, ps.column[p]] = init.hot_logit
    edge = np.full(t.K, init.edge_logit)
    return DiffSymbolicTree(t, NodeMatrix(logits), AdjacencyMatrix(t.parents, edge), ps,
                            init.scale_binary_inputs)


def forward_batch(dst: DiffSymbolicTree, X: np.ndarray) -> np.ndarray:
    """Per-node outputs, shape (K, n)."""
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=float)
    if X.shape[1] != dst.primitive_set.d:
        raise ValueError(f"samples have {X.shape[1]} features, expected {dst.primitive_set.d}")
    a = K.sigmoid(dst.adjacency.edge_logits)
    return K.forward(*dst.structure, dst.node_matrix.weights(), a, X, dst.scale_binary_inputs)


def forward(dst: DiffSymbolicTree, X: Sequence[float]) -> tuple[float, np.ndarray]:
    """Root output for one sample and the trace of every node's output."""
    R = forward_batch(dst, np.asarray(X, dtype=float)[None, :])
    return float(R[0, 0]), R[:, 0]


def predict(dst: DiffSymbolicTree, X: np.ndarray) -> np.ndarray:
    return forward_batch(dst, X)[0]


# Reference (numpy) mixing rules.  The compiled forward pass implements the
# same rules; these stay readable and are used to cross-check it.

def mix_node(raw_inputs: Sequence[float], strengths: Sequence[float], w_row: Sequence[float],
             ps: PrimitiveSet, X: Sequence[float] | None = None,
             scale_binary_inputs: bool = True) -> float:
    """Output of one function node: sum_j w_j * O_j(arity-adapted inputs).

    ``raw_inputs`` are the children's outputs in child order and ``strengths``
    the matching edge strengths.  ``X`` is needed only when some terminal
    column carries weight.
    """
    raw = np.asarray(raw_inputs, dtype=float)
    a = np.asarray(strengths, dtype=float)
    w = np.asarray(w_row, dtype=float)
    if len(raw) not in (1, 2) or len(a) != len(raw):
        raise ValueError("a function node has one or two children")
    scaled = a * raw
    star = 0 if len(raw) == 1 or a[0] >= a[1] else 1
    bin_in = scaled if scale_binary_inputs else raw
    u1, u2 = (bin_in[0], bin_in[0]) if len(raw) == 1 else (bin_in[0], bin_in[1])
    out = 0.0
    for wj, p in zip(w, ps.primitives):
        if wj == 0.0:
            continue
        if p.is_terminal:
            if X is None:
                raise ValueError("terminal columns need the sample X")
            out += wj * X[p.index]
        elif p.arity == 1:
            out += wj * _apply(p.kind, scaled[star])[0]
        else:
            out += wj * _apply(p.kind, u1, u2)[0]
    return float(out)


def mix_leaf(w_row: Sequence[float], ps: PrimitiveSet, X: Sequence[float]) -> float:
    """Leaf output: terminal mass on X plus function mass applied to the top terminals."""
    w = np.asarray(w_row, dtype=float)
    cols = [j for j, p in enumerate(ps.primitives) if p.is_terminal]
    order = sorted(cols, key=lambda j: (-w[j], j))
    xh = X[ps.primitives[order[0]].index]
    xh2 = X[ps.primitives[order[1]].index] if len(order) > 1 else xh
    out = 0.0
    for wj, p in zip(w, ps.primitives):
        if p.is_terminal:
            out += wj * X[p.index]
        elif p.arity == 1:
            out += wj * _apply(p.kind, xh)[0]
        else:
            out += wj * _apply(p.kind, xh, xh2)[0]
    return float(out)


def forward_reference(dst: DiffSymbolicTree, X: Sequence[float]) -> float:
    """Slow node-by-node forward pass built from ``mix_node``/``mix_leaf``."""
    W = dst.node_matrix.weights()
    a = K.sigmoid(dst.adjacency.edge_logits)
    t = dst.tree
    r = np.zeros(t.K)
    for i in range(t.K - 1, -1, -1):
        ch = t.children[i]
        if not ch:
            r[i] = mix_leaf(W[i], dst.primitive_set, X)
        else:
            r[i] = mix_node([r[c] for c in ch], [a[c] for c in ch], W[i], dst.primitive_set, X,
                            dst.scale_binary_inputs)
    return float(r[0])


def report(dst: DiffSymbolicTree, top: int = 3) -> str:
    """Text dump: per-node top primitive weights and per-edge strengths."""
    W = dst.node_matrix.weights()
    prims = dst.primitive_set.primitives
    lines = [f"DST K={dst.K} L={dst.primitive_set.L} tree={dst.tree}"]
    for i, p in enumerate(dst.tree.prims):
        best = np.argsort(-W[i], kind="stable")[:top]
        ws = ", ".join(f"{prims[j]}={W[i, j]:.4f}" for j in best)
        lines.append(f"node {i:3d} [{p}] {ws}")
    for i, j in dst.adjacency.edges():
        lines.append(f"edge {i:3d} -> {j:3d} strength={dst.adjacency.strength(i, j):.4f}")
    return "\n".join(lines)
