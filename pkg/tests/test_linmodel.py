import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from truthful_ssa.linmodel import LearnerStack, init_state, score, update


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@pytest.mark.parametrize("d", [1, 2, 4])
def test_fresh_state_width_is_alpha(d):
    st_ = init_state(d)
    assert np.array_equal(st_.theta, np.zeros(d))
    x = unit(np.arange(1, d + 1))
    s = score(st_, x, 0.7)
    assert s.estimate == 0.0
    assert s.width == pytest.approx(0.7)
    assert s.ucb == pytest.approx(0.7) and s.lcb == pytest.approx(-0.7)
    s0 = score(st_, x, 0.0)
    assert s0.ucb == s0.lcb == 0.0


def test_hand_solved_update():
    s = update(init_state(2), np.array([1.0, 0.0]), 1)
    assert np.allclose(s.A, np.diag([2.0, 1.0]))
    assert np.allclose(s.c, [1.0, 0.0])
    assert np.allclose(s.theta, [0.5, 0.0])
    sc = score(s, np.array([1.0, 0.0]), 1.0)
    assert sc.ucb == pytest.approx(0.5 + math.sqrt(0.5), abs=1e-12)
    other = score(s, np.array([0.0, 1.0]), 0.8)
    assert other.estimate == pytest.approx(0.0, abs=1e-15)
    assert other.width == pytest.approx(0.8)


def test_zero_click_keeps_c_and_shrinks_width():
    x = unit([1.0, 2.0])
    s = init_state(2)
    w0 = score(s, x, 1.0).width
    update(s, x, 0)
    assert np.array_equal(s.c, np.zeros(2))
    assert score(s, x, 1.0).width < w0


def test_rejects_non_binary_click():
    with pytest.raises(ValueError):
        update(init_state(2), np.array([1.0, 0.0]), 0.5)
    with pytest.raises(ValueError):
        score(init_state(2), np.array([1.0, 0.0]), -1.0)


@given(st.integers(0, 2**31), st.integers(1, 6))
def test_incremental_matches_dense_solve(seed, d):
    rng = np.random.default_rng(seed)
    s = init_state(d)
    X = rng.random((1000, d))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    r = rng.integers(0, 2, size=1000)
    A = np.eye(d)
    c = np.zeros(d)
    for k in range(1000):
        update(s, X[k], int(r[k]))
        A += np.outer(X[k], X[k])
        c += r[k] * X[k]
        if k % 97 == 0 or k == 999:
            assert np.max(np.abs(s.theta - np.linalg.solve(A, c))) <= 1e-8
    assert np.allclose(s.A, A, atol=1e-9)
    assert np.max(np.abs(s.A_inv - np.linalg.inv(A))) <= 1e-8


@given(st.integers(0, 2**31))
def test_width_never_grows_and_eigen_floor(seed):
    rng = np.random.default_rng(seed)
    d = 3
    s = init_state(d)
    probes = rng.random((20, d))
    probes /= np.linalg.norm(probes, axis=1, keepdims=True)
    last = np.array([score(s, p, 1.0).width for p in probes])
    for _ in range(60):
        update(s, unit(rng.random(d) + 1e-3), int(rng.integers(0, 2)))
        now = np.array([score(s, p, 1.0).width for p in probes])
        assert np.all(now <= last + 1e-12)
        last = now
    z = rng.normal(size=(50, d))
    assert np.all(np.einsum("ij,jk,ik->i", z, s.A, z) >= np.sum(z * z, axis=1) - 1e-9)


def test_score_is_pure():
    s = update(init_state(2), unit([1.0, 1.0]), 1)
    before = s.copy()
    score(s, unit([0.3, 1.0]), 2.0)
    assert np.array_equal(before.A_inv, s.A_inv) and np.array_equal(before.theta, s.theta)


def test_stack_snapshot_restore():
    stack = LearnerStack(3, 2)
    snap = stack.snapshot()
    stack.A[1] += 1.0
    stack.counts[2] = 5
    stack.restore(snap)
    assert np.array_equal(stack.A, np.tile(np.eye(2), (3, 1, 1)))
    assert stack.counts.sum() == 0
    st1 = stack.state(0)
    st1.A[0, 0] = 9.0
    assert stack.A[0, 0, 0] == 1.0  # state() hands out copies
