import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dgp import _kernels as K
from dgp.dst import InitConfig, relax
from dgp.errors import DegenerateTargetError
from dgp.expr import ADD, SUB, PrimitiveSet, parse_prefix
from dgp.grad import (AdamState, LossConfig, TrainConfig, adam_step, backward, loss_01, nrmse,
                      record, sigmoid_backward, softmax_backward, total_loss, train_dst, value_and_grad,
                      write_trajectory_csv)

from helpers import grad_close, gradcheck_case, random_dst

seeds = st.integers(0, 2**32 - 1)
ONE_HOT = InitConfig(hot_logit=1e3)  # exp(-1e3) underflows, rows are exactly one-hot


# ---------------------------------------------------------------- losses

def test_nrmse_examples():
    assert nrmse([1, 2, 3], [1, 2, 3]) == 0.0
    assert nrmse([0, 2], [1, 1]) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DegenerateTargetError):
        nrmse([5, 5, 5], [1, 2, 3])


def test_nrmse_non_finite_prediction_uses_sentinel():
    assert nrmse([0, 2], [np.nan, 1]) > 1e11


def test_loss01_examples():
    assert loss_01([[0.5, 0.5]]) == 0.0
    assert loss_01([np.eye(9)[3]]) == pytest.approx(-0.25, abs=1e-12)
    assert loss_01([np.full(9, 1 / 9)]) == pytest.approx(-0.15123456790123457, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(arrays(float, st.integers(2, 20), elements=st.floats(0, 1)))
def test_loss01_bounds(raw):
    if raw.sum() == 0:
        raw = raw + 1
    w = raw / raw.sum()
    assert -0.25 - 1e-12 <= loss_01([w]) <= 0.0


def test_total_loss_combination():
    t = parse_prefix("x0")
    ps = PrimitiveSet.default(1)
    dst = relax(t, ps, ONE_HOT)
    X = np.array([[1.0], [1.0]])
    assert total_loss(dst, X, np.array([0.0, 2.0]), LossConfig(0.1)) == pytest.approx(0.975, abs=1e-12)
    X = np.array([[1.0], [3.0]])
    assert total_loss(dst, X, np.array([1.0, 3.0]), LossConfig(0.1)) == pytest.approx(-0.025, abs=1e-12)
    assert total_loss(dst, X, np.array([0.0, 2.0]), LossConfig(0.0)) == nrmse([0, 2], [1, 3])


def test_negative_lambda_rejected():
    with pytest.raises(ValueError):
        LossConfig(-0.1)


# ---------------------------------------------------------------- backward

def test_sigmoid_derivative_at_zero():
    assert sigmoid_backward(0.5, 1.0) == 0.25


def test_gradcheck_on_small_dsts():
    checked = 0
    for seed in range(60):
        case = gradcheck_case(seed)
        if case is None:
            continue
        analytic, numeric = case
        assert grad_close(analytic, numeric), seed
        checked += 1
    assert checked >= 50


def test_loss01_gradient_symmetric_across_equal_entries():
    logits = np.array([[4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]])
    W = np.exp(logits) / np.exp(logits).sum()
    _, gW = K.loss01_and_grad(W)
    g = softmax_backward(W, gW)[0]
    assert np.allclose(g[1:], g[1], rtol=0, atol=1e-15)
    assert np.isclose(g.sum(), 0.0, atol=1e-15)


def test_fused_gradient_matches_tape():
    rng = np.random.default_rng(4)
    for _ in range(50):
        d = int(rng.integers(1, 4))
        dst = random_dst(rng, d, max_nodes=15)
        X = rng.uniform(-1, 1, (6, d))
        y = rng.normal(size=6)
        tape = record(dst, X, y)
        gl, gv = backward(tape)
        loss, fl, fv = value_and_grad(dst, X, y)
        assert loss == pytest.approx(tape.loss, rel=1e-12)
        assert np.allclose(gl, fl, rtol=1e-10, atol=1e-12)
        assert np.allclose(gv[1:], fv[1:], rtol=1e-10, atol=1e-12)


def test_root_edge_has_no_gradient():
    dst = relax(parse_prefix("(+ x0 x1)"), PrimitiveSet.default(2))
    _, gv = backward(record(dst, np.array([[1.0, 2.0], [0.0, 1.0]]), np.array([1.0, 0.0])))
    assert gv[0] == 0.0


# ---------------------------------------------------------------- Adam

def test_adam_first_step():
    p, s = adam_step(np.zeros(4), np.ones(4), AdamState.zeros_like(np.zeros(4)), 0.005)
    assert np.allclose(p, -0.004999999950000001, rtol=0, atol=1e-15)
    assert s.step == 1


def test_adam_zero_gradient_leaves_params():
    p0 = np.array([1.0, -2.0])
    p, _ = adam_step(p0, np.zeros(2), AdamState.zeros_like(p0), 0.005)
    assert np.array_equal(p, p0)


def test_adam_second_step_magnitude():
    p0 = np.zeros(3)
    p1, s = adam_step(p0, np.full(3, 2.0), AdamState.zeros_like(p0), 0.005)
    p2, _ = adam_step(p1, np.full(3, 2.0), s, 0.005)
    step = np.abs(p2 - p1)
    assert np.all((0.9 * 0.005 <= step) & (step <= 0.005))


def test_adam_does_not_mutate_inputs():
    p0 = np.zeros(2)
    s0 = AdamState.zeros_like(p0)
    adam_step(p0, np.ones(2), s0, 0.1)
    assert np.all(p0 == 0) and s0.step == 0 and np.all(s0.m == 0)


# ---------------------------------------------------------------- training

def _xy(d=2, n=20, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1, 1, (n, d))


def test_training_from_correct_tree_does_not_get_worse():
    X = _xy(1)
    y = X[:, 0]
    dst = relax(parse_prefix("x0"), PrimitiveSet.default(1))
    res = train_dst(dst, X, y, TrainConfig(epochs=50), LossConfig(), np.random.default_rng(0))
    assert res.history[-1, 0] <= res.history[0, 0]


def test_training_turns_minus_into_plus():
    X = _xy(2)
    y = X[:, 0] + X[:, 1]
    ps = PrimitiveSet.default(2)
    # oracle: the one-hot + configuration fits better than the one-hot - one
    plus = relax(parse_prefix("(+ x0 x1)"), ps, ONE_HOT)
    minus = relax(parse_prefix("(- x0 x1)"), ps, ONE_HOT)
    assert total_loss(plus, X, y) < total_loss(minus, X, y)
    dst = relax(parse_prefix("(- x0 x1)"), ps)
    res = train_dst(dst, X, y, TrainConfig(epochs=1000), LossConfig(), np.random.default_rng(1))
    W = res.dst.node_matrix.weights()
    assert W[0, ps.column[ADD]] > W[0, ps.column[SUB]]
    assert dst.node_matrix.weights()[0, ps.column[SUB]] > 0.8  # input untouched


def test_training_is_deterministic():
    X = _xy(2)
    y = np.sin(X[:, 0]) + X[:, 1]
    dst = relax(parse_prefix("(* x0 (cos x1))"), PrimitiveSet.default(2))
    tc = TrainConfig(epochs=100, batch_size=8)
    a = train_dst(dst, X, y, tc, LossConfig(), np.random.default_rng(9))
    b = train_dst(dst, X, y, tc, LossConfig(), np.random.default_rng(9))
    assert np.array_equal(a.history, b.history)
    assert np.array_equal(a.dst.node_matrix.logits, b.dst.node_matrix.logits)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_training_keeps_logits_finite_and_rows_normalised(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 4))
    dst = random_dst(rng, d, max_nodes=15, logit_scale=3.0)
    X = rng.uniform(-5, 5, (12, d))
    y = rng.normal(size=12) * 10
    res = dst
    for _ in range(5):  # check after every epoch block
        res = train_dst(res, X, y, TrainConfig(epochs=10, lr_node=0.1, lr_edge=0.1), LossConfig(),
                        rng).dst
        assert np.all(np.isfinite(res.node_matrix.logits))
        assert np.all(np.isfinite(res.adjacency.edge_logits))
        assert np.allclose(res.node_matrix.weights().sum(axis=1), 1.0, atol=1e-12)


def test_batches_per_epoch_and_batch_size():
    X = _xy(2, n=30)
    y = X[:, 0] * X[:, 1]
    dst = relax(parse_prefix("(* x0 x1)"), PrimitiveSet.default(2))
    res = train_dst(dst, X, y, TrainConfig(epochs=7, batch_size=10, batches_per_epoch=3),
                    LossConfig(), np.random.default_rng(0))
    assert res.history.shape == (7, 3)
    assert res.node_state.step == 21
    assert TrainConfig().resolved_batch_size(1000) == 256
    assert TrainConfig().resolved_batch_size(15) == 15


def test_training_rejects_constant_target():
    X = _xy(1)
    with pytest.raises(DegenerateTargetError):
        train_dst(relax(parse_prefix("x0"), PrimitiveSet.default(1)), X, np.ones(len(X)),
                  TrainConfig(epochs=2), LossConfig(), np.random.default_rng(0))


def test_trajectory_csv(tmp_path):
    X = _xy(1)
    res = train_dst(relax(parse_prefix("(sin x0)"), PrimitiveSet.default(1)), X, X[:, 0] ** 2,
                    TrainConfig(epochs=5), LossConfig(), np.random.default_rng(0))
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, res.history)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["epoch", "nrmse", "loss01", "total"] and len(rows) == 6
    assert float(rows[5][3]) == res.history[4, 2]
