"""Discrete expression trees over a fixed primitive set.

Trees are immutable and stored in preorder, so every subtree occupies a
contiguous slice of ``SymbolicTree.prims``.  All arithmetic goes through the
protected operators below; they are shared by the relaxed model, the
gradient kernels and the fitness evaluator.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

DIV_FLOOR = 1e-6
LOG_FLOOR = 1e-6
EXP_CLAMP = 50.0
# Saturation bound for every operator output; keeps long product chains finite.
MAG_LIMIT = 1e300


class Kind(enum.IntEnum):
    ADD = 0
    SUB = 1
    MUL = 2
    DIV = 3
    SIN = 4
    COS = 5
    EXP = 6
    LOG = 7
    PASS = 8
    VAR = 9


ARITY = {
    Kind.ADD: 2, Kind.SUB: 2, Kind.MUL: 2, Kind.DIV: 2,
    Kind.SIN: 1, Kind.COS: 1, Kind.EXP: 1, Kind.LOG: 1, Kind.PASS: 1,
    Kind.VAR: 0,
}

SYMBOLS = {
    Kind.ADD: "+", Kind.SUB: "-", Kind.MUL: "*", Kind.DIV: "/",
    Kind.SIN: "sin", Kind.COS: "cos", Kind.EXP: "exp", Kind.LOG: "log",
    Kind.PASS: "pass",
}
_BY_SYMBOL = {s: k for k, s in SYMBOLS.items()}


@dataclass(frozen=True, order=True)
class Primitive:
    kind: Kind
    index: int = -1  # variable ordinal, only meaningful for VAR

    def __post_init__(self):
        if self.kind is Kind.VAR and self.index < 0:
            raise ValueError("Var primitive needs a non-negative index")

    @property
    def arity(self) -> int:
        return ARITY[self.kind]

    @property
    def is_terminal(self) -> bool:
        return self.kind is Kind.VAR

    def __str__(self) -> str:
        return f"x{self.index}" if self.kind is Kind.VAR else SYMBOLS[self.kind]


ADD = Primitive(Kind.ADD)
SUB = Primitive(Kind.SUB)
MUL = Primitive(Kind.MUL)
DIV = Primitive(Kind.DIV)
SIN = Primitive(Kind.SIN)
COS = Primitive(Kind.COS)
EXP = Primitive(Kind.EXP)
LOG = Primitive(Kind.LOG)
PASS = Primitive(Kind.PASS)
FUNCTIONS = (ADD, SUB, MUL, DIV, SIN, COS, EXP, LOG, PASS)


def var(i: int) -> Primitive:
    return Primitive(Kind.VAR, i)


@dataclass(frozen=True)
class PrimitiveSet:
    """Ordered primitive set; column j of a node matrix is ``primitives[j]``.

    The default order is the nine functions followed by x0..x{d-1}; any other
    order is allowed as long as it stays fixed for a run.
    """

    primitives: tuple[Primitive, ...]

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if len(set(self.primitives)) != len(self.primitives):
            raise ValueError("duplicate primitives")
        idx = sorted(p.index for p in self.terminals)
        if not idx or idx != list(range(len(idx))):
            raise ValueError("terminals must cover x0..x{d-1} exactly once")

    @classmethod
    def default(cls, d: int) -> "PrimitiveSet":
        if d < 1:
            raise ValueError("need at least one input variable")
        return cls(FUNCTIONS + tuple(var(i) for i in range(d)))

    @cached_property
    def functions(self) -> tuple[Primitive, ...]:
        return tuple(p for p in self.primitives if not p.is_terminal)

    @cached_property
    def terminals(self) -> tuple[Primitive, ...]:
        return tuple(p for p in self.primitives if p.is_terminal)

    @property
    def L(self) -> int:
        return len(self.primitives)

    @property
    def d(self) -> int:
        return len(self.terminals)

    @cached_property
    def column(self) -> dict[Primitive, int]:
        return {p: j for j, p in enumerate(self.primitives)}

    @cached_property
    def generative_functions(self) -> tuple[Primitive, ...]:
        """Functions eligible for random generation (everything but Pass)."""
        return tuple(p for p in self.functions if p.kind is not Kind.PASS)

    def permuted(self, order: Sequence[int]) -> "PrimitiveSet":
        return PrimitiveSet(tuple(self.primitives[k] for k in order))


@dataclass(frozen=True)
class Caps:
    max_nodes: int = 64
    max_depth: int = 8

    def admits(self, tree: "SymbolicTree") -> bool:
        return tree.size <= self.max_nodes and tree.depth <= self.max_depth


@dataclass(frozen=True)
class Node:
    primitive: Primitive
    parent: int | None
    children: tuple[int, ...]


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class SymbolicTree:
    """An expression tree in preorder; node 0 is the root."""

    prims: tuple[Primitive, ...]
    _links: tuple = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "prims", tuple(self.prims))
        object.__setattr__(self, "_links", _link(self.prims))

    @property
    def K(self) -> int:
        return len(self.prims)

    size = K
    root = 0

    @property
    def parents(self) -> tuple[int | None, ...]:
        return self._links[0]

    @property
    def children(self) -> tuple[tuple[int, ...], ...]:
        return self._links[1]

    @property
    def depths(self) -> tuple[int, ...]:
        return self._links[2]

    @property
    def depth(self) -> int:
        return max(self.depths)

    @property
    def nodes(self) -> tuple[Node, ...]:
        return tuple(Node(p, self.parents[i], self.children[i]) for i, p in enumerate(self.prims))

    def subtree_end(self, i: int) -> int:
        """Exclusive end of the preorder slice holding the subtree at ``i``."""
        return self._links[3][i]

    def subtree(self, i: int) -> "SymbolicTree":
        return SymbolicTree(self.prims[i:self.subtree_end(i)])

    def replace_subtree(self, i: int, new: Sequence[Primitive] | "SymbolicTree") -> "SymbolicTree":
        new = new.prims if isinstance(new, SymbolicTree) else tuple(new)
        return SymbolicTree(self.prims[:i] + new + self.prims[self.subtree_end(i):])

    def variables(self) -> set[int]:
        return {p.index for p in self.prims if p.is_terminal}

    def __str__(self) -> str:
        return format_prefix(self)


def _link(prims: tuple[Primitive, ...]):
    if not prims:
        raise TreeError("empty tree")
    K = len(prims)
    parents: list[int | None] = [None] * K
    children: list[list[int]] = [[] for _ in range(K)]
    depths = [0] * K
    ends = [0] * K
    stack: list[int] = []  # open nodes still waiting for children
    for i, p in enumerate(prims):
        if not isinstance(p, Primitive):
            raise TreeError(f"node {i} is not a Primitive: {p!r}")
        if i > 0:
            if not stack:
                raise TreeError("trailing nodes after a complete tree")
            par = stack[-1]
            parents[i] = par
            children[par].append(i)
            depths[i] = depths[par] + 1
            if len(children[par]) == prims[par].arity:
                stack.pop()
        if p.arity:
            stack.append(i)
    if stack:
        raise TreeError("incomplete tree: some nodes lack children")
    # subtree ends: walk backwards, a node's end is the end of its last child
    for i in range(K - 1, -1, -1):
        ends[i] = ends[children[i][-1]] if children[i] else i + 1
    return (tuple(parents), tuple(tuple(c) for c in children), tuple(depths), tuple(ends))


def tree_size(t: SymbolicTree) -> int:
    return t.K


def validate(t: SymbolicTree, caps: Caps | None = None, d: int | None = None) -> None:
    """Raise ``TreeError`` unless ``t`` is a well-formed tree within ``caps``."""
    roots = [i for i, p in enumerate(t.parents) if p is None]
    if roots != [0]:
        raise TreeError(f"expected a single root at 0, got {roots}")
    for i, node in enumerate(t.nodes):
        if len(node.children) != node.primitive.arity:
            raise TreeError(f"node {i} has {len(node.children)} children, arity {node.primitive.arity}")
        for c in node.children:
            if t.parents[c] != i:
                raise TreeError(f"inconsistent parent link at {c}")
    if caps is not None and not caps.admits(t):
        raise TreeError(f"tree exceeds caps: size {t.size}, depth {t.depth}")
    if d is not None and any(v >= d for v in t.variables()):
        raise TreeError(f"tree references a variable outside x0..x{d - 1}")


# ---------------------------------------------------------------- evaluation

def _sat(v):
    return np.clip(v, -MAG_LIMIT, MAG_LIMIT)


def apply_primitive(p: Primitive, inputs: Sequence[float]) -> float:
    """Apply a function primitive with the protected semantics."""
    if len(inputs) != p.arity or p.is_terminal:
        raise ValueError(f"{p} takes {p.arity} inputs, got {len(inputs)}")
    out = _apply(p.kind, *(np.asarray(x, dtype=float) for x in inputs))[0]
    return float(out)


def _apply(kind: Kind, a, b=None):
    """Vectorised protected operator; returns (value, protection_fired_mask)."""
    with np.errstate(all="ignore"):
        if kind is Kind.ADD:
            v = a + b
            fired = np.zeros(np.shape(v), bool)
        elif kind is Kind.SUB:
            v = a - b
            fired = np.zeros(np.shape(v), bool)
        elif kind is Kind.MUL:
            v = a * b
            fired = np.zeros(np.shape(v), bool)
        elif kind is Kind.DIV:
            small = np.abs(b) < DIV_FLOOR
            den = np.where(small, np.where(b < 0, -DIV_FLOOR, DIV_FLOOR), b)
            v = a / den
            fired = small
        elif kind is Kind.SIN:
            v, fired = np.sin(a), np.zeros(np.shape(a), bool)
        elif kind is Kind.COS:
            v, fired = np.cos(a), np.zeros(np.shape(a), bool)
        elif kind is Kind.EXP:
            fired = a > EXP_CLAMP
            v = np.exp(np.minimum(a, EXP_CLAMP))
        elif kind is Kind.LOG:
            fired = a < LOG_FLOOR
            v = np.log(np.abs(a) + LOG_FLOOR)
        elif kind is Kind.PASS:
            v, fired = a, np.zeros(np.shape(a), bool)
        else:
            raise ValueError(f"not a function primitive: {kind!r}")
        sat = np.abs(v) > MAG_LIMIT
    return _sat(v), fired | sat


def evaluate_batch(t: SymbolicTree, X: np.ndarray, return_flags: bool = False):
    """Evaluate ``t`` on every row of ``X`` (n x d).

    With ``return_flags`` also returns a boolean mask marking samples where
    any protection rule (division floor, log floor, exp clamp, saturation)
    changed a result.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    n = X.shape[0]
    fired = np.zeros(n, bool)
    stack = []
    for p in reversed(t.prims):
        k = p.kind
        if k is Kind.VAR:
            stack.append(X[:, p.index])
        elif p.arity == 1:
            v, f = _apply(k, stack.pop())
            fired |= f
            stack.append(v)
        else:
            a = stack.pop()
            b = stack.pop()
            v, f = _apply(k, a, b)
            fired |= f
            stack.append(v)
    out = np.broadcast_to(stack.pop(), (n,)).astype(float)
    return (out, fired) if return_flags else out


def evaluate_tree(t: SymbolicTree, X: Sequence[float], ps: PrimitiveSet | None = None) -> float:
    X = np.asarray(X, dtype=float)
    if ps is not None and X.shape[-1] != ps.d:
        raise ValueError(f"sample has {X.shape[-1]} values, primitive set expects {ps.d}")
    return float(evaluate_batch(t, X[None, :])[0])


# ---------------------------------------------------------------- generation

def random_tree(rng: np.random.Generator, depth_range: tuple[int, int], method: str,
                ps: PrimitiveSet) -> SymbolicTree:
    """Grow or full tree (Koza style); Pass is never generated."""
    d_min, d_max = depth_range
    if not 0 <= d_min <= d_max:
        raise ValueError(f"bad depth range {depth_range}")
    if method not in ("grow", "full"):
        raise ValueError(f"unknown method {method!r}")
    funcs = ps.generative_functions
    terms = ps.terminals
    height = int(rng.integers(d_min, d_max + 1))
    p_term = len(terms) / (len(terms) + len(funcs))
    out: list[Primitive] = []
    todo = [0]  # depths of nodes still to generate, in preorder
    while todo:
        depth = todo.pop()
        if depth == height or (method == "grow" and depth >= d_min and rng.random() < p_term):
            out.append(terms[int(rng.integers(len(terms)))])
        else:
            f = funcs[int(rng.integers(len(funcs)))]
            out.append(f)
            todo.extend([depth + 1] * f.arity)
    return SymbolicTree(tuple(out))


def ramped_half_and_half(rng: np.random.Generator, n: int, depth_range: tuple[int, int],
                         ps: PrimitiveSet) -> list[SymbolicTree]:
    return [random_tree(rng, depth_range, "grow" if i % 2 == 0 else "full", ps) for i in range(n)]


# ---------------------------------------------------------------- rewriting

def simplify(t: SymbolicTree) -> SymbolicTree:
    """Remove every Pass node.

    Pass is unary and its child directly follows it in preorder, so dropping
    it from the sequence splices the child into its place.  No other rewrite
    is exact under the protected semantics without constants.
    """
    kept = tuple(p for p in t.prims if p.kind is not Kind.PASS)
    return t if len(kept) == t.K else SymbolicTree(kept)


def _equiv_points(domain: Sequence[tuple[float, float]], n_points: int,
                  rng: np.random.Generator | None) -> np.ndarray:
    d = len(domain)
    lo = np.array([a for a, _ in domain], float)
    hi = np.array([b for _, b in domain], float)
    if d == 1:
        u = ((np.arange(n_points) + 0.5) / n_points)[:, None]
    elif d == 2:
        m = int(round(np.sqrt(n_points)))
        g = (np.arange(m) + 0.5) / m
        u = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    else:
        from scipy.stats import qmc

        seed = rng if rng is not None else np.random.default_rng(0)
        u = qmc.Sobol(d, scramble=True, seed=seed).random(n_points)
    return lo + u * (hi - lo)


def numeric_equiv(a: SymbolicTree, b: SymbolicTree, domain: Sequence[tuple[float, float]],
                  rng: np.random.Generator | None = None, n_points: int = 256,
                  rtol: float = 1e-10) -> bool:
    """Pointwise equivalence of two trees on quasi-uniform points in ``domain``.

    Points where a protection fires in either tree are skipped; if more than
    half are skipped the answer is indeterminate and reported as False.
    """
    d = len(domain)
    if any(v >= d for v in a.variables() | b.variables()):
        raise ValueError("trees reference variables outside the domain")
    X = _equiv_points(domain, n_points, rng)
    ya, fa = evaluate_batch(simplify(a), X, return_flags=True)
    yb, fb = evaluate_batch(simplify(b), X, return_flags=True)
    ok = ~(fa | fb)
    if ok.sum() * 2 < len(X):
        return False
    return bool(np.all(np.abs(ya[ok] - yb[ok]) <= rtol * (1.0 + np.abs(yb[ok]))))


# ---------------------------------------------------------------- text form

_TOKEN = re.compile(r"\(|\)|[^\s()]+")
_VAR = re.compile(r"x(\d+)$")


class ExpressionParseError(ValueError):
    pass


def format_prefix(t: SymbolicTree) -> str:
    parts: list[str] = []
    open_counts: list[int] = []  # children still expected by each open paren
    for p in t.prims:
        if p.is_terminal:
            parts.append(str(p))
        else:
            parts.append("(" + str(p))
            open_counts.append(p.arity)
            continue
        # a leaf just closed a slot; close every finished parent
        while open_counts:
            open_counts[-1] -= 1
            if open_counts[-1]:
                break
            open_counts.pop()
            parts[-1] += ")"
    return " ".join(parts)


def parse_prefix(text: str) -> SymbolicTree:
    """Parse ``(+ (sin x0) x1)``-style text; inverse of ``format_prefix``."""
    tokens = _TOKEN.findall(text)
    if not tokens:
        raise ExpressionParseError("empty expression")
    out: list[Primitive] = []
    pos = 0

    def expr():
        nonlocal pos
        if pos >= len(tokens):
            raise ExpressionParseError("unexpected end of expression")
        tok = tokens[pos]
        pos += 1
        if tok == "(":
            if pos >= len(tokens):
                raise ExpressionParseError("unexpected end after '('")
            sym = tokens[pos]
            pos += 1
            if sym not in _BY_SYMBOL:
                raise ExpressionParseError(f"unknown operator {sym!r}")
            prim = Primitive(_BY_SYMBOL[sym])
            out.append(prim)
            for _ in range(prim.arity):
                expr()
            if pos >= len(tokens) or tokens[pos] != ")":
                raise ExpressionParseError(f"operator {sym!r} expects {prim.arity} operand(s)")
            pos += 1
        elif tok == ")":
            raise ExpressionParseError("unexpected ')'")
        else:
            m = _VAR.match(tok)
            if not m:
                raise ExpressionParseError(f"unknown token {tok!r}")
            out.append(var(int(m.group(1))))

    expr()
    if pos != len(tokens):
        raise ExpressionParseError(f"trailing tokens: {' '.join(tokens[pos:])}")
    return SymbolicTree(tuple(out))


def to_infix(t: SymbolicTree, names: Sequence[str] | None = None) -> str:
    """Human-readable infix rendering (not round-trippable)."""

    def rec(i: int) -> str:
        p = t.prims[i]
        if p.is_terminal:
            return names[p.index] if names else str(p)
        args = [rec(c) for c in t.children[i]]
        if p.arity == 2:
            return f"({args[0]} {SYMBOLS[p.kind]} {args[1]})"
        return args[0] if p.kind is Kind.PASS else f"{SYMBOLS[p.kind]}({args[0]})"

    return rec(0)


def trees_from_text(lines: Iterable[str]) -> list[SymbolicTree]:
    return [parse_prefix(s) for s in lines if s.strip()]
