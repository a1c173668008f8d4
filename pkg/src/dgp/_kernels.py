"""Compiled kernels for the relaxed tree: forward pass, reverse pass, loss, Adam.

Structure arrays shared by every kernel (K nodes, L columns):

    arity[K], child1[K], child2[K]   tree topology, preorder, -1 for absent
    col_kind[L], col_var[L]          operator code / variable index per column

Preorder guarantees children have larger indices than parents, so the
forward pass runs i = K-1 .. 0 and the reverse pass replays it as i = 0 .. K-1.
Operator codes follow ``expr.Kind``.
"""

import numpy as np
from numba import njit

DIV_FLOOR = 1e-6
LOG_FLOOR = 1e-6
EXP_CLAMP = 50.0
MAG_LIMIT = 1e300
VAR = 9
FIRST_UNARY = 4  # codes 4..8 are unary, 0..3 binary


@njit(cache=True)
def op(k, u, v):
    if k == 0:
        r = u + v
    elif k == 1:
        r = u - v
    elif k == 2:
        r = u * v
    elif k == 3:
        if abs(v) >= DIV_FLOOR:
            r = u / v
        elif v < 0:
            r = u / -DIV_FLOOR
        else:
            r = u / DIV_FLOOR
    elif k == 4:
        r = np.sin(u)
    elif k == 5:
        r = np.cos(u)
    elif k == 6:
        r = np.exp(min(u, EXP_CLAMP))
    elif k == 7:
        r = np.log(abs(u) + LOG_FLOOR)
    else:
        r = u
    if r > MAG_LIMIT:
        return MAG_LIMIT
    if r < -MAG_LIMIT:
        return -MAG_LIMIT
    return r


@njit(cache=True)
def dop(k, u, v):
    """Partial derivatives (d/du, d/dv) of the protected operator."""
    if k == 0:
        r, du, dv = u + v, 1.0, 1.0
    elif k == 1:
        r, du, dv = u - v, 1.0, -1.0
    elif k == 2:
        r, du, dv = u * v, v, u
    elif k == 3:
        if abs(v) >= DIV_FLOOR:
            r, du, dv = u / v, 1.0 / v, -u / (v * v)
        else:
            den = -DIV_FLOOR if v < 0 else DIV_FLOOR
            r, du, dv = u / den, 1.0 / den, 0.0
    elif k == 4:
        r, du, dv = np.sin(u), np.cos(u), 0.0
    elif k == 5:
        r, du, dv = np.cos(u), -np.sin(u), 0.0
    elif k == 6:
        if u < EXP_CLAMP:
            r = np.exp(u)
            du = r
        else:
            r, du = np.exp(EXP_CLAMP), 0.0
        dv = 0.0
    elif k == 7:
        r, du, dv = np.log(abs(u) + LOG_FLOOR), np.sign(u) / (abs(u) + LOG_FLOOR), 0.0
    else:
        r, du, dv = u, 1.0, 0.0
    if abs(r) > MAG_LIMIT:
        return 0.0, 0.0
    return du, dv


@njit(cache=True)
def softmax_rows(logits, temperature=1.0):
    K, L = logits.shape
    W = np.empty((K, L))
    for i in range(K):
        m = logits[i, 0] / temperature
        for j in range(1, L):
            m = max(m, logits[i, j] / temperature)
        z = 0.0
        for j in range(L):
            W[i, j] = np.exp(logits[i, j] / temperature - m)
            z += W[i, j]
        for j in range(L):
            W[i, j] /= z
    return W


@njit(cache=True)
def sigmoid(v):
    out = np.empty_like(v)
    for i in range(v.shape[0]):
        if v[i] >= 0:
            out[i] = 1.0 / (1.0 + np.exp(-v[i]))
        else:
            e = np.exp(v[i])
            out[i] = e / (1.0 + e)
    return out


@njit(cache=True)
def top2_terminals(w, col_kind):
    """Columns of the largest and second-largest terminal weight (first wins ties)."""
    t1 = -1
    t2 = -1
    for j in range(w.shape[0]):
        if col_kind[j] != VAR:
            continue
        if t1 < 0 or w[j] > w[t1]:
            t2 = t1
            t1 = j
        elif t2 < 0 or w[j] > w[t2]:
            t2 = j
    if t2 < 0:
        t2 = t1
    return t1, t2


@njit(cache=True)
def forward(arity, child1, child2, col_kind, col_var, W, a, X, scale_binary):
    """Per-node outputs R[K, n] of the mixing-node tree for samples X[n, d]."""
    K, L = W.shape
    n = X.shape[0]
    R = np.zeros((K, n))
    for i in range(K - 1, -1, -1):
        if arity[i] == 0:
            t1, t2 = top2_terminals(W[i], col_kind)
            for s in range(n):
                xh = X[s, col_var[t1]]
                xh2 = X[s, col_var[t2]]
                acc = 0.0
                for j in range(L):
                    k = col_kind[j]
                    if k == VAR:
                        acc += W[i, j] * X[s, col_var[j]]
                    elif k >= FIRST_UNARY:
                        acc += W[i, j] * op(k, xh, 0.0)
                    else:
                        acc += W[i, j] * op(k, xh, xh2)
                R[i, s] = acc
        elif arity[i] == 1:
            c = child1[i]
            for s in range(n):
                u = a[c] * R[c, s]
                ub = u if scale_binary else R[c, s]
                acc = 0.0
                for j in range(L):
                    k = col_kind[j]
                    if k == VAR:
                        acc += W[i, j] * X[s, col_var[j]]
                    elif k >= FIRST_UNARY:
                        acc += W[i, j] * op(k, u, 0.0)
                    else:
                        acc += W[i, j] * op(k, ub, ub)
                R[i, s] = acc
        else:
            ca = child1[i]
            cb = child2[i]
            cs = ca if a[ca] >= a[cb] else cb
            for s in range(n):
                u = a[cs] * R[cs, s]
                if scale_binary:
                    u1 = a[ca] * R[ca, s]
                    u2 = a[cb] * R[cb, s]
                else:
                    u1 = R[ca, s]
                    u2 = R[cb, s]
                acc = 0.0
                for j in range(L):
                    k = col_kind[j]
                    if k == VAR:
                        acc += W[i, j] * X[s, col_var[j]]
                    elif k >= FIRST_UNARY:
                        acc += W[i, j] * op(k, u, 0.0)
                    else:
                        acc += W[i, j] * op(k, u1, u2)
                R[i, s] = acc
    return R


@njit(cache=True)
def backward(arity, child1, child2, col_kind, col_var, W, a, X, R, g_root, scale_binary):
    """Reverse pass: gradients w.r.t. the softmax weights W and edge strengths a.

    Replays the forward node order backwards (parents first); each node's
    upstream gradient is complete before it is visited.
    """
    K, L = W.shape
    n = X.shape[0]
    G = np.zeros((K, n))
    G[0, :] = g_root
    gW = np.zeros((K, L))
    ga = np.zeros(K)
    for i in range(K):
        if arity[i] == 0:
            t1, t2 = top2_terminals(W[i], col_kind)
            for s in range(n):
                g = G[i, s]
                if g == 0.0:
                    continue
                xh = X[s, col_var[t1]]
                xh2 = X[s, col_var[t2]]
                for j in range(L):
                    k = col_kind[j]
                    if k == VAR:
                        gW[i, j] += g * X[s, col_var[j]]
                    elif k >= FIRST_UNARY:
                        gW[i, j] += g * op(k, xh, 0.0)
                    else:
                        gW[i, j] += g * op(k, xh, xh2)
        elif arity[i] == 1:
            c = child1[i]
            sb = a[c] if scale_binary else 1.0
            for s in range(n):
                g = G[i, s]
                r = R[c, s]
                u = a[c] * r
                ub = sb * r
                du = 0.0
                dub = 0.0
                for j in range(L):
                    k = col_kind[j]
                    if k == VAR:
                        gW[i, j] += g * X[s, col_var[j]]
                    elif k >= FIRST_UNARY:
                        gW[i, j] += g * op(k, u, 0.0)
                        d1, d2 = dop(k, u, 0.0)
                        du += W[i, j] * d1
                    else:
                        gW[i, j] += g * op(k, ub, ub)
                        d1, d2 = dop(k, ub, ub)
                        dub += W[i, j] * (d1 + d2)
                du *= g
                dub *= g
                G[c, s] += a[c] * du + sb * dub
                ga[c] += r * du
                if scale_binary:
                    ga[c] += r * dub
        else:
            ca = child1[i]
            cb = child2[i]
            cs = ca if a[ca] >= a[cb] else cb
            sa = a[ca] if scale_binary else 1.0
            sbb = a[cb] if scale_binary else 1.0
            for s in range(n):
                g = G[i, s]
                rs = R[cs, s]
                u = a[cs] * rs
                u1 = sa * R[ca, s]
                u2 = sbb * R[cb, s]
                du = 0.0
                du1 = 0.0
                du2 = 0.0
                for j in range(L):
                    k = col_kind[j]
                    if k == VAR:
                        gW[i, j] += g * X[s, col_var[j]]
                    elif k >= FIRST_UNARY:
                        gW[i, j] += g * op(k, u, 0.0)
                        d1, d2 = dop(k, u, 0.0)
                        du += W[i, j] * d1
                    else:
                        gW[i, j] += g * op(k, u1, u2)
                        d1, d2 = dop(k, u1, u2)
                        du1 += W[i, j] * d1
                        du2 += W[i, j] * d2
                du *= g
                du1 *= g
                du2 *= g
                G[cs, s] += a[cs] * du
                ga[cs] += rs * du
                G[ca, s] += sa * du1
                G[cb, s] += sbb * du2
                if scale_binary:
                    ga[ca] += R[ca, s] * du1
                    ga[cb] += R[cb, s] * du2
    return gW, ga


@njit(cache=True)
def nrmse_and_grad(y, yhat):
    """NRMSE with the 1e12 sentinel for non-finite predictions; grad w.r.t. yhat."""
    n = y.shape[0]
    mean = 0.0
    for s in range(n):
        mean += y[s]
    mean /= n
    var = 0.0
    for s in range(n):
        var += (y[s] - mean) ** 2
    sigma = np.sqrt(var / n)
    sq = 0.0
    res = np.empty(n)
    finite = np.empty(n, np.bool_)
    for s in range(n):
        p = yhat[s]
        finite[s] = np.isfinite(p)
        if not finite[s]:
            p = 1e12
        res[s] = p - y[s]
        sq += res[s] * res[s]
    rmse = np.sqrt(sq / n)
    g = np.zeros(n)
    if rmse > 0.0 and sigma > 0.0:
        for s in range(n):
            if finite[s]:
                g[s] = res[s] / (n * rmse * sigma)
    return rmse / sigma, g


@njit(cache=True)
def loss01_and_grad(W):
    K, L = W.shape
    total = 0.0
    g = np.empty((K, L))
    for i in range(K):
        for j in range(L):
            dv = W[i, j] - 0.5
            total -= dv * dv / L
            g[i, j] = -2.0 * dv / (L * K)
    return total / K, g


@njit(cache=True)
def value_and_grad(arity, child1, child2, col_kind, col_var, logits, v, X, y, lam, scale_binary):
    """Total loss, its parts and gradients w.r.t. node logits and edge logits."""
    W = softmax_rows(logits)
    a = sigmoid(v)
    R = forward(arity, child1, child2, col_kind, col_var, W, a, X, scale_binary)
    nr, g_root = nrmse_and_grad(y, R[0])
    l01, gW01 = loss01_and_grad(W)
    gW, ga = backward(arity, child1, child2, col_kind, col_var, W, a, X, R, g_root, scale_binary)
    K, L = W.shape
    g_logits = np.empty((K, L))
    for i in range(K):
        dot = 0.0
        for j in range(L):
            gW[i, j] += lam * gW01[i, j]
            dot += W[i, j] * gW[i, j]
        for j in range(L):
            g_logits[i, j] = W[i, j] * (gW[i, j] - dot)
    g_v = np.zeros(K)
    for i in range(1, K):
        g_v[i] = a[i] * (1.0 - a[i]) * ga[i]
    return nr + lam * l01, nr, l01, g_logits, g_v


@njit(cache=True)
def adam_update(p, g, m, s, t, lr, b1, b2, eps):
    """In-place Adam descent step number ``t`` (1-based) on flat arrays."""
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i in range(p.shape[0]):
        gi = g[i]
        if not np.isfinite(gi):
            gi = 0.0
        m[i] = b1 * m[i] + (1.0 - b1) * gi
        s[i] = b2 * s[i] + (1.0 - b2) * gi * gi
        p[i] -= lr * (m[i] / c1) / (np.sqrt(s[i] / c2) + eps)


@njit(cache=True)
def train_loop(arity, child1, child2, col_kind, col_var, logits, v, X, y, batches, lam,
               lr_node, lr_edge, b1, b2, eps, scale_binary, m_l, s_l, m_v, s_v, t0):
    """Run one Adam step per row of ``batches``; returns per-epoch (nrmse, loss01, total)."""
    E = batches.shape[0]
    hist = np.empty((E, 3))
    flat_l = logits.reshape(-1)
    for e in range(E):
        idx = batches[e]
        Xb = X[idx]
        yb = y[idx]
        total, nr, l01, g_l, g_v = value_and_grad(
            arity, child1, child2, col_kind, col_var, logits, v, Xb, yb, lam, scale_binary)
        hist[e, 0] = nr
        hist[e, 1] = l01
        hist[e, 2] = total
        t = t0 + e + 1
        adam_update(flat_l, g_l.reshape(-1), m_l, s_l, t, lr_node, b1, b2, eps)
        adam_update(v, g_v, m_v, s_v, t, lr_edge, b1, b2, eps)
    return hist
