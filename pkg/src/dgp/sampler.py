"""Turning trained relaxed trees back into expressions, and the GP diversifier.

Discretisation walks the nodes bottom-up, draws a primitive per node from
its (tempered) softmax row and edits the tree according to the arity change:
SHRINK when the arity drops (or Pass is drawn), REPLACE when it is equal,
EXPAND when it grows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _kernels as K
from .dst import AdjacencyMatrix, DiffSymbolicTree
from .expr import (Caps, Kind, Primitive, PrimitiveSet, SymbolicTree, TreeError,
                   random_tree)


@dataclass(frozen=True)
class SampleConfig:
    temperature: float = 1.0
    samples_per_dst: int = 1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.samples_per_dst < 1:
            raise ValueError("samples_per_dst must be >= 1")


@dataclass(frozen=True)
class GeneticConfig:
    crossover_rate: float = 0.5
    mutation_rate: float = 0.5
    tournament_size: int = 3
    generations_per_iteration: int = 20
    mutate_depth: tuple[int, int] = (0, 2)


class CapExceeded(TreeError):
    pass


# ---------------------------------------------------------------- tree edits

def _stronger_child(children: Sequence[int], strengths) -> int:
    if len(children) == 1:
        return children[0]
    c1, c2 = children
    return c1 if strengths[c1] >= strengths[c2] else c2


def shrink(t: SymbolicTree, i: int, adjacency: AdjacencyMatrix | np.ndarray) -> SymbolicTree:
    """Delete function node ``i``; its (strongest) child takes its place."""
    if t.prims[i].is_terminal:
        raise TreeError(f"cannot shrink terminal node {i}")
    a = adjacency.strengths() if isinstance(adjacency, AdjacencyMatrix) else np.asarray(adjacency)
    keep = _stronger_child(t.children[i], a)
    return t.replace_subtree(i, t.subtree(keep))


def replace(t: SymbolicTree, i: int, new: Primitive) -> SymbolicTree:
    if new.arity != t.prims[i].arity:
        raise TreeError(f"replace needs equal arity: {t.prims[i]} -> {new}")
    prims = list(t.prims)
    prims[i] = new
    return SymbolicTree(tuple(prims))


def expand(t: SymbolicTree, i: int, new: Primitive, rng: np.random.Generator, ps: PrimitiveSet,
           caps: Caps = Caps(), first: Primitive | None = None) -> SymbolicTree:
    """Raise the arity of node ``i``; missing operands become random terminals.

    An existing child stays the first operand.  For a leaf, ``first`` (if
    given) is used as the first operand instead of a random terminal.
    """
    old = t.prims[i]
    if new.arity <= old.arity:
        raise TreeError(f"expand needs a larger arity: {old} -> {new}")
    operands = [t.subtree(c).prims for c in t.children[i]]
    if not operands and first is not None:
        operands.append((first,))
    while len(operands) < new.arity:
        operands.append((ps.terminals[int(rng.integers(ps.d))],))
    sub = (new,) + tuple(p for op in operands for p in op)
    out = t.replace_subtree(i, sub)
    if not caps.admits(out):
        raise CapExceeded(f"expanding node {i} exceeds caps")
    return out


# ---------------------------------------------------------------- sampling

class _MNode:
    __slots__ = ("prim", "children", "strengths", "parent")

    def __init__(self, prim):
        self.prim = prim
        self.children: list[_MNode] = []
        self.strengths: list[float] = []
        self.parent: _MNode | None = None


def _draw(cum: np.ndarray, rng: np.random.Generator) -> int:
    j = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return min(j, len(cum) - 1)


def sample_tree(dst: DiffSymbolicTree, rng: np.random.Generator, cfg: SampleConfig = SampleConfig(),
                caps: Caps = Caps()) -> SymbolicTree:
    t = dst.tree
    ps = dst.primitive_set
    prims = ps.primitives
    arities = np.array([p.arity for p in prims])
    W = dst.node_matrix.weights(cfg.temperature)
    a = K.sigmoid(dst.adjacency.edge_logits)
    term_cols = [j for j, p in enumerate(prims) if p.is_terminal]

    nodes = [_MNode(p) for p in t.prims]
    for i, ch in enumerate(t.children):
        for c in ch:
            nodes[i].children.append(nodes[c])
            nodes[i].strengths.append(a[c])
            nodes[c].parent = nodes[i]
    root = nodes[0]

    def put(old: _MNode, new: _MNode):
        nonlocal root
        par = old.parent
        new.parent = par
        if par is None:
            root = new
        else:
            par.children[par.children.index(old)] = new

    def size() -> int:
        n, stack = 0, [root]
        while stack:
            x = stack.pop()
            n += 1
            stack.extend(x.children)
        return n

    def depth_of(x: _MNode) -> int:
        d = 0
        while x.parent is not None:
            x, d = x.parent, d + 1
        return d

    def leaf(p: Primitive) -> _MNode:
        return _MNode(p)

    for i in range(t.K - 1, -1, -1):
        node = nodes[i]
        ac = len(node.children)
        w = W[i]
        j = _draw(np.cumsum(w), rng)
        p = prims[j]
        if p.arity > ac and p.kind is not Kind.PASS:
            grow = p.arity - ac
            if size() + grow > caps.max_nodes or depth_of(node) + 1 > caps.max_depth:
                w2 = np.where(arities <= ac, w, 0.0)
                j = _draw(np.cumsum(w2), rng)
                p = prims[j]
        # the leaf's dominant terminal, used as its first operand / Pass result
        tw = [w[c] for c in term_cols]
        x_hat = prims[term_cols[int(np.argmax(tw))]]

        if p.kind is Kind.PASS:
            if ac == 0:
                # pass(x_hat) at a leaf collapses straight back to x_hat
                node.prim = x_hat
            else:
                k = 0 if ac == 1 or node.strengths[0] >= node.strengths[1] else 1
                put(node, node.children[k])
        elif p.arity == ac:
            node.prim = p
        elif p.arity < ac:
            if p.is_terminal:
                put(node, leaf(p))
            else:  # binary -> unary: keep the stronger operand
                k = 0 if node.strengths[0] >= node.strengths[1] else 1
                node.prim = p
                node.children = [node.children[k]]
                node.strengths = [node.strengths[k]]
        else:
            ops = list(node.children)
            if ac == 0:
                ops.append(leaf(x_hat))
            while len(ops) < p.arity:
                ops.append(leaf(ps.terminals[int(rng.integers(ps.d))]))
            node.prim = p
            node.children = ops
            node.strengths = node.strengths + [1.0] * (p.arity - len(node.strengths))
            for c in ops:
                c.parent = node

    out: list[Primitive] = []
    stack = [root]
    while stack:
        x = stack.pop()
        out.append(x.prim)
        stack.extend(reversed(x.children))
    return SymbolicTree(tuple(out))


# ---------------------------------------------------------------- genetic operators

def crossover_one_point(a: SymbolicTree, b: SymbolicTree, rng: np.random.Generator,
                        caps: Caps = Caps()) -> tuple[SymbolicTree, SymbolicTree]:
    """Swap uniformly chosen subtrees; an offspring over the caps reverts to its parent."""
    i = int(rng.integers(a.K))
    j = int(rng.integers(b.K))
    a2 = a.replace_subtree(i, b.subtree(j))
    b2 = b.replace_subtree(j, a.subtree(i))
    return (a2 if caps.admits(a2) else a), (b2 if caps.admits(b2) else b)


def mutate_uniform(t: SymbolicTree, rng: np.random.Generator, ps: PrimitiveSet,
                   cfg: GeneticConfig = GeneticConfig(), caps: Caps = Caps()) -> SymbolicTree:
    i = int(rng.integers(t.K))
    new = random_tree(rng, cfg.mutate_depth, "grow", ps)
    out = t.replace_subtree(i, new)
    return out if caps.admits(out) else t


def tournament(fitness: Sequence[float], rng: np.random.Generator, size: int = 3) -> int:
    """Index of the lowest fitness among ``size`` draws with replacement."""
    picks = rng.integers(len(fitness), size=size)
    best = int(picks[0])
    for k in picks[1:]:
        if fitness[k] < fitness[best]:
            best = int(k)
    return best


def diversify(pool: Sequence[SymbolicTree], fitness: Sequence[float],
              evaluate: Callable[[SymbolicTree], float], gc: GeneticConfig,
              rng: np.random.Generator, ps: PrimitiveSet, caps: Caps = Caps(),
              budget=None, generations: int | None = None):
    """Generational GP with single-elite preservation.

    ``evaluate`` is called once per new offspring (it is expected to charge the
    budget); unchanged offspring keep their cached fitness.  The loop stops
    before a generation once ``budget.exhausted`` is true.
    """
    trees = list(pool)
    fit = [float(f) for f in fitness]
    if not trees:
        raise ValueError("empty pool")
    G = gc.generations_per_iteration if generations is None else generations
    N = len(trees)
    for _ in range(G):
        if budget is not None and budget.exhausted:
            break
        elite = int(np.argmin(fit))
        parents = [tournament(fit, rng, gc.tournament_size) for _ in range(N)]
        kids = [trees[k] for k in parents]
        kfit = [fit[k] for k in parents]
        changed = [False] * N
        for k in range(0, N - 1, 2):
            if rng.random() < gc.crossover_rate:
                c1, c2 = crossover_one_point(kids[k], kids[k + 1], rng, caps)
                changed[k] |= c1 != kids[k]
                changed[k + 1] |= c2 != kids[k + 1]
                kids[k], kids[k + 1] = c1, c2
        for k in range(N):
            if rng.random() < gc.mutation_rate:
                m = mutate_uniform(kids[k], rng, ps, gc, caps)
                changed[k] |= m != kids[k]
                kids[k] = m
        # every random draw of the generation happens before any evaluation
        for k in range(N):
            if changed[k]:
                kfit[k] = evaluate(kids[k])
        worst = int(np.argmax(kfit))
        kids[worst], kfit[worst] = trees[elite], fit[elite]
        trees, fit = kids, kfit
    return trees, fit
