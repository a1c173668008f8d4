"""Shared builders for the test suite."""

from __future__ import annotations

import numpy as np

from dgp.dst import AdjacencyMatrix, DiffSymbolicTree, NodeMatrix, relax
from dgp.expr import Caps, PrimitiveSet, SymbolicTree, random_tree
from dgp.grad import LossConfig, total_loss


def random_small_tree(rng: np.random.Generator, ps: PrimitiveSet, max_nodes: int = 9,
                      depth=(0, 3)) -> SymbolicTree:
    caps = Caps(max_nodes=max_nodes, max_depth=depth[1])
    while True:
        method = "grow" if rng.random() < 0.5 else "full"
        t = random_tree(rng, depth, method, ps)
        if caps.admits(t):
            return t


def random_dst(rng: np.random.Generator, d: int, max_nodes: int = 9, logit_scale: float = 1.0,
               edge_scale: float = 1.0) -> DiffSymbolicTree:
    """A random topology with random (not one-hot) logits."""
    ps = PrimitiveSet.default(d)
    t = random_small_tree(rng, ps, max_nodes)
    dst = relax(t, ps)
    return DiffSymbolicTree(t, NodeMatrix(rng.normal(0, logit_scale, (t.K, ps.L))),
                            AdjacencyMatrix(t.parents, rng.normal(0, edge_scale, t.K)), ps,
                            dst.scale_binary_inputs)


def with_params(dst: DiffSymbolicTree, logits, edges) -> DiffSymbolicTree:
    return DiffSymbolicTree(dst.tree, NodeMatrix(logits), AdjacencyMatrix(dst.tree.parents, edges),
                            dst.primitive_set, dst.scale_binary_inputs)


def central_differences(dst: DiffSymbolicTree, X, y, cfg: LossConfig = LossConfig(), h: float = 1e-5):
    """Finite-difference gradient of the total loss, by perturbing each logit in turn."""
    base_l = dst.node_matrix.logits
    base_v = dst.adjacency.edge_logits
    gl = np.zeros_like(base_l)
    gv = np.zeros_like(base_v)
    for idx in np.ndindex(base_l.shape):
        lp, lm = base_l.copy(), base_l.copy()
        lp[idx] += h
        lm[idx] -= h
        gl[idx] = (total_loss(with_params(dst, lp, base_v), X, y, cfg)
                   - total_loss(with_params(dst, lm, base_v), X, y, cfg)) / (2 * h)
    for k in range(1, len(base_v)):  # the root has no incoming edge
        vp, vm = base_v.copy(), base_v.copy()
        vp[k] += h
        vm[k] -= h
        gv[k] = (total_loss(with_params(dst, base_l, vp), X, y, cfg)
                 - total_loss(with_params(dst, base_l, vm), X, y, cfg)) / (2 * h)
    return gl, gv


# Central differences carry an error floor near eps * |loss| / h, which swamps
# small gradient entries once exp chains push the loss past this level.
FD_LOSS_LIMIT = 1e6


def gradcheck_case(seed: int, h: float = 1e-5):
    """One seeded gradcheck case: (analytic, numeric) flattened gradients.

    Returns None when the finite-difference oracle cannot be trusted: the
    loss is huge, or the estimates at h and h/10 disagree (high curvature
    near a protected singularity).  That test never looks at the analytic side.
    """
    from dgp.grad import backward, record

    rng = np.random.default_rng([seed, 17])
    d = int(rng.integers(1, 4))
    dst = random_dst(rng, d)
    n = int(rng.integers(2, 9))
    X = rng.uniform(-2, 2, (n, d))
    y = rng.normal(size=n)
    cfg = LossConfig()
    tape = record(dst, X, y, cfg)
    if not abs(tape.loss) <= FD_LOSS_LIMIT:
        return None
    gl, gv = backward(tape)
    nl, nv = central_differences(dst, X, y, cfg, h)
    fl, fv = central_differences(dst, X, y, cfg, h / 10)
    num = np.concatenate([nl.ravel(), nv])
    if not grad_close(num, np.concatenate([fl.ravel(), fv])):
        return None
    return np.concatenate([gl.ravel(), gv]), num


def grad_close(a, b, rtol=1e-4, atol=1e-6) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool(np.all(np.abs(a - b) <= atol + rtol * np.maximum(np.abs(a), np.abs(b))))


def consistency_case(seed: int, logit: float = 40.0, max_nodes: int = 15):
    """(relaxed output, discrete output) for a seeded random tree and sample.

    Returns None when a protection fires in the discrete evaluation or some
    node value leaves [-20, 20].  Past that, the e^-40 weight left on the exp
    column is multiplied by e^u and the finite-logit limit is not yet reached.
    """
    from dgp.dst import InitConfig, forward
    from dgp.expr import evaluate_batch

    rng = np.random.default_rng([seed, 23])
    d = int(rng.integers(1, 4))
    ps = PrimitiveSet.default(d)
    t = random_small_tree(rng, ps, max_nodes, depth=(0, 4))
    X = rng.uniform(-2, 2, (1, d))
    truth, fired = evaluate_batch(t, X, return_flags=True)
    nodes = np.array([evaluate_batch(t.subtree(i), X)[0] for i in range(t.K)])
    if fired[0] or not np.all(np.abs(nodes) <= 20):
        return None
    out, _ = forward(relax(t, ps, InitConfig(hot_logit=logit, edge_logit=logit)), X[0])
    return out, float(truth[0])
