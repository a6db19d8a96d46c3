"""Online ridge regression per agent: Gram matrix, response vector, confidence widths.

The numerics live in small jitted kernels that take one learner's arrays
(``A``, ``A_inv``, ``c``, ``theta``). Allocators keep stacks of these arrays and
call the same kernels from both the per-round Python API and the whole-run
loops, so the two paths produce identical floating-point traces.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

REFACTOR_EVERY = 512
# Sherman-Morrison denominators are 1 + x'A^-1x >= 1 exactly; anything below
# this signals a drifted inverse.
_DENOM_ALARM = 1.0 - 1e-9


@njit(cache=True)
def quad_form(A_inv, x):
    d = x.shape[0]
    q = 0.0
    for a in range(d):
        s = 0.0
        for b in range(d):
            s += A_inv[a, b] * x[b]
        q += x[a] * s
    return q if q > 0.0 else 0.0


@njit(cache=True)
def dot(u, x):
    s = 0.0
    for a in range(x.shape[0]):
        s += u[a] * x[a]
    return s


@njit(cache=True)
def refresh_theta(A_inv, c, theta):
    d = c.shape[0]
    for a in range(d):
        s = 0.0
        for b in range(d):
            s += A_inv[a, b] * c[b]
        theta[a] = s


@njit(cache=True)
def refactor(A, A_inv):
    A_inv[:, :] = np.linalg.inv(A)
    d = A.shape[0]
    for a in range(d):
        for b in range(a + 1, d):
            m = 0.5 * (A_inv[a, b] + A_inv[b, a])
            A_inv[a, b] = m
            A_inv[b, a] = m


@njit(cache=True)
def rank_one_update(A, A_inv, c, theta, x, r, count):
    """Record one observation; returns the new observation count."""
    d = x.shape[0]
    u = np.empty(d)
    for a in range(d):
        s = 0.0
        for b in range(d):
            s += A_inv[a, b] * x[b]
        u[a] = s
    denom = 1.0 + dot(x, u)
    for a in range(d):
        c[a] += r * x[a]
        for b in range(d):
            A[a, b] += x[a] * x[b]
    count += 1
    if count % REFACTOR_EVERY == 0 or not denom >= _DENOM_ALARM:
        refactor(A, A_inv)
    else:
        for a in range(d):
            for b in range(d):
                A_inv[a, b] -= u[a] * u[b] / denom
    refresh_theta(A_inv, c, theta)
    return count


class ConfidenceScore(NamedTuple):
    estimate: float
    width: float
    ucb: float
    lcb: float


@dataclass
class LearnerState:
    A: np.ndarray
    A_inv: np.ndarray
    c: np.ndarray
    theta: np.ndarray
    count: int = 0

    @property
    def d(self) -> int:
        return self.c.shape[0]

    def copy(self) -> "LearnerState":
        return LearnerState(self.A.copy(), self.A_inv.copy(), self.c.copy(), self.theta.copy(),
                            self.count)

    def solve(self) -> np.ndarray:
        """From-scratch dense solve of A theta = c (the oracle for ``theta``)."""
        return np.linalg.solve(self.A, self.c)


def init_state(d: int) -> LearnerState:
    if d < 1:
        raise ValueError("need d >= 1")
    return LearnerState(np.eye(d), np.eye(d), np.zeros(d), np.zeros(d), 0)


def update(state: LearnerState, x, r) -> LearnerState:
    """Add observation ``(x, r)`` in place and return the same state."""
    if r not in (0, 1):
        raise ValueError("click must be 0 or 1")
    x = np.ascontiguousarray(x, dtype=float)
    state.count = rank_one_update(state.A, state.A_inv, state.c, state.theta, x, float(r),
                                  state.count)
    return state


def score(state: LearnerState, x, alpha: float) -> ConfidenceScore:
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    x = np.ascontiguousarray(x, dtype=float)
    est = dot(state.theta, x)
    w = alpha * math.sqrt(quad_form(state.A_inv, x))
    return ConfidenceScore(est, w, est + w, est - w)


class LearnerStack:
    """``m`` independent learners stored as stacked arrays for the jitted allocators."""

    def __init__(self, m: int, d: int):
        self.A = np.tile(np.eye(d), (m, 1, 1))
        self.A_inv = np.tile(np.eye(d), (m, 1, 1))
        self.c = np.zeros((m, d))
        self.theta = np.zeros((m, d))
        self.counts = np.zeros(m, dtype=np.int64)

    def arrays(self):
        return self.A, self.A_inv, self.c, self.theta, self.counts

    def state(self, k: int) -> LearnerState:
        return LearnerState(self.A[k].copy(), self.A_inv[k].copy(), self.c[k].copy(),
                            self.theta[k].copy(), int(self.counts[k]))

    def snapshot(self) -> dict:
        return {name: arr.copy() for name, arr in
                zip(("A", "A_inv", "c", "theta", "counts"), self.arrays())}

    def restore(self, snap: dict) -> None:
        for name in ("A", "A_inv", "c", "theta", "counts"):
            getattr(self, name)[...] = snap[name]
