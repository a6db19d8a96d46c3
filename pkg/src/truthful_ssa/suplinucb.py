"""SupLinUCB-S: staged allocation with per-(agent, stage) ridge estimators.

Stage ``s`` (1-based) of agent ``i`` is fed only by rounds in which ``i`` was the
designated agent, survived the screens of stages ``1..s-1`` and had stage-``s``
width above ``2**-s``. Index sets only grow, so each (agent, stage) pair keeps
one incrementally updated learner instead of rebuilding from the index set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .elinucb import AllocationDecision, Trace
from .linmodel import LearnerStack, dot, quad_form, rank_one_update

DESIGNATED_EXPLORE = 0
GLOBAL_EXPLOIT = 1
SCREEN_DESCEND = 2
FORCED_EXPLOIT = 3
RULES = ("designated-explore", "global-exploit", "screen-descend", "forced-exploit")


def stage_count(T: int) -> int:
    """Number of stages ``ceil(ln T)``, at least 1."""
    if T < 2:
        raise ValueError("need T >= 2")
    return max(1, math.ceil(math.log(T)))


def calibrated_alpha(n: int, T: int, kappa: float = 0.05) -> float:
    """Exploration scale ``sqrt(ln(2 n T / kappa) / 2)`` used by the regret guarantee."""
    if not 0 < kappa < 1:
        raise ValueError("kappa must lie in (0, 1)")
    return math.sqrt(0.5 * math.log(2 * n * T / kappa))


@njit(cache=True)
def _argmax_value(bids, ucb, alive):
    best = -np.inf
    arg = -1
    for i in range(bids.shape[0]):
        if alive[i]:
            v = bids[i] * ucb[i]
            if v > best:
                best = v
                arg = i
    return arg


@njit(cache=True)
def _decide(t, x, bids, alpha, S, inv_sqrt_T, A_inv, theta, alive, w, ucb, descents):
    """Returns (agent, rule, stage, width of agent); ``alive`` holds the final screen."""
    n = bids.shape[0]
    j = t % n
    for i in range(n):
        alive[i] = True
    for s in range(S):
        thr = 0.5 ** (s + 1)
        small_T = True
        small_s = True
        for i in range(n):
            if alive[i]:
                k = i * S + s
                w[i] = alpha * math.sqrt(quad_form(A_inv[k], x))
                ucb[i] = dot(theta[k], x) + w[i]
                if w[i] > inv_sqrt_T:
                    small_T = False
                if w[i] > thr:
                    small_s = False
        if alive[j] and w[j] > thr:
            return j, DESIGNATED_EXPLORE, s + 1, w[j]
        if small_T:
            i = _argmax_value(bids, ucb, alive)
            return i, GLOBAL_EXPLOIT, s + 1, w[i]
        if small_s:
            best = -np.inf
            for i in range(n):
                if alive[i] and bids[i] * ucb[i] > best:
                    best = bids[i] * ucb[i]
            cut = best - 2.0 * thr
            for i in range(n):
                if alive[i] and bids[i] * ucb[i] < cut:
                    alive[i] = False
            descents[s] += 1
            continue
        i = _argmax_value(bids, ucb, alive)
        return i, FORCED_EXPLOIT, s + 1, w[i]
    return -1, -1, -1, 0.0


@njit(cache=True)
def _observe(i, rule, stage, x, r, S, A, A_inv, c, theta, counts):
    if rule == DESIGNATED_EXPLORE:
        k = i * S + stage - 1
        counts[k] = rank_one_update(A[k], A_inv[k], c[k], theta[k], x, r, counts[k])


@njit(cache=True)
def _run(t0, contexts, tape, bids, alpha, S, inv_sqrt_T, A, A_inv, c, theta, counts,
         descents, alloc, rules, stages, widths, masks):
    n = bids.shape[0]
    alive = np.empty(n, dtype=np.bool_)
    w = np.empty(n)
    ucb = np.empty(n)
    for k in range(contexts.shape[0]):
        t = t0 + k
        x = contexts[k]
        i, rule, stage, wi = _decide(t, x, bids, alpha, S, inv_sqrt_T, A_inv, theta, alive, w,
                                     ucb, descents)
        if i < 0:
            return k
        _observe(i, rule, stage, x, float(tape[i, k]), S, A, A_inv, c, theta, counts)
        alloc[k] = i
        rules[k] = rule
        stages[k] = stage
        widths[k] = wi
        m = 0
        for a in range(n):
            if alive[a]:
                m |= 1 << a
        masks[k] = m
    return -1


@dataclass
class SupTrace(Trace):
    stages: np.ndarray = None
    widths: np.ndarray = None
    masks: np.ndarray = None  # bitmask of the last screened set per round

    def index_set(self, agent: int, stage: int) -> np.ndarray:
        """1-based rounds recorded for ``agent`` at ``stage``."""
        sel = (self.tags == DESIGNATED_EXPLORE) & (self.allocated == agent) & (self.stages == stage)
        return np.flatnonzero(sel) + 1


class SupLinUCB:
    """SupLinUCB-S allocator; needs the horizon ``T`` for its stage count and thresholds."""

    def __init__(self, bids, d: int, T: int, alpha: float | None = None, kappa: float = 0.05):
        self.bids = np.array(bids, dtype=float)
        if self.bids.ndim != 1 or self.bids.size < 1:
            raise ValueError("bids must be a nonempty vector")
        if self.bids.size > 62:
            raise ValueError("at most 62 agents (screen masks are int64)")
        self.n = self.bids.size
        self.d = d
        self.T = int(T)
        self.S = stage_count(self.T)
        self.alpha = calibrated_alpha(self.n, self.T, kappa) if alpha is None else float(alpha)
        self.inv_sqrt_T = 1.0 / math.sqrt(self.T)
        self.learners = LearnerStack(self.n * self.S, d)
        self.descents = np.zeros(self.S, dtype=np.int64)
        self.rule_counts = np.zeros((len(RULES), self.S), dtype=np.int64)
        self._alive = np.empty(self.n, dtype=np.bool_)
        self._w = np.empty(self.n)
        self._ucb = np.empty(self.n)
        self.t = 0

    def _k(self, i: int, s: int) -> int:
        return i * self.S + s - 1

    def step(self, t: int, x, click) -> AllocationDecision:
        if t != self.t + 1:
            raise ValueError(f"expected round {self.t + 1}, got {t}")
        x = np.ascontiguousarray(x, dtype=float)
        i, rule, stage, _ = _decide(t, x, self.bids, self.alpha, self.S, self.inv_sqrt_T,
                                    self.learners.A_inv, self.learners.theta, self._alive,
                                    self._w, self._ucb, self.descents)
        if i < 0:
            raise AssertionError(f"stage loop did not terminate by stage {self.S} at round {t}")
        r = click(i) if callable(click) else click
        A, A_inv, c, theta, counts = self.learners.arrays()
        _observe(i, rule, stage, x, float(r), self.S, A, A_inv, c, theta, counts)
        self.rule_counts[rule, stage - 1] += 1
        self.t = t
        return AllocationDecision(int(i), RULES[rule], rule == DESIGNATED_EXPLORE, RULES[rule],
                                  int(stage))

    def run(self, contexts, tape) -> SupTrace:
        contexts = np.ascontiguousarray(contexts, dtype=float)
        tape = np.ascontiguousarray(tape, dtype=np.int8)
        T = contexts.shape[0]
        alloc = np.empty(T, dtype=np.int64)
        rules = np.empty(T, dtype=np.int8)
        stages = np.empty(T, dtype=np.int64)
        widths = np.empty(T)
        masks = np.empty(T, dtype=np.int64)
        A, A_inv, c, theta, counts = self.learners.arrays()
        bad = _run(self.t + 1, contexts, tape, self.bids, self.alpha, self.S, self.inv_sqrt_T,
                   A, A_inv, c, theta, counts, self.descents, alloc, rules, stages, widths, masks)
        if bad >= 0:
            raise AssertionError(f"stage loop did not terminate at round {self.t + bad + 1}")
        np.add.at(self.rule_counts, (rules.astype(np.int64), stages - 1), 1)
        self.t += T
        return SupTrace(alloc, rules, RULES, stages, widths, masks)

    def stage_scores(self, x, s: int):
        """(estimate, width, ucb) arrays over all agents at stage ``s``; no state change."""
        x = np.ascontiguousarray(x, dtype=float)
        est = np.empty(self.n)
        w = np.empty(self.n)
        for i in range(self.n):
            k = self._k(i, s)
            est[i] = dot(self.learners.theta[k], x)
            w[i] = self.alpha * math.sqrt(quad_form(self.learners.A_inv[k], x))
        return est, w, est + w

    @property
    def index_set_sizes(self) -> np.ndarray:
        """(n, S) table of |Psi_i^s|."""
        return self.learners.counts.reshape(self.n, self.S).copy()

    def learner(self, i: int, s: int):
        return self.learners.state(self._k(i, s))

    def diagnostics(self) -> dict:
        return {
            "stages": self.S,
            "alpha": self.alpha,
            "index_set_sizes": self.index_set_sizes.tolist(),
            "rule_counts": {name: self.rule_counts[k].tolist() for k, name in enumerate(RULES)
                            if k != SCREEN_DESCEND},
            "screen_descents": self.descents.tolist(),
        }

    def snapshot(self) -> dict:
        return {"kind": "suplinucb", "t": self.t, "learners": self.learners.snapshot(),
                "descents": self.descents.copy(), "rule_counts": self.rule_counts.copy()}

    def restore(self, snap: dict) -> None:
        self.t = int(snap["t"])
        self.learners.restore(snap["learners"])
        self.descents[...] = snap["descents"]
        self.rule_counts[...] = snap["rule_counts"]


def base_linucb_scores(rounds, contexts, clicks, x, alpha: float):
    """From-scratch stage estimator: ridge fit on the listed rounds, scored at ``x``.

    ``rounds`` are 1-based; ``contexts`` is (T, d) and ``clicks`` the agent's (T,) click row.
    Returns ``(estimate, width)``.
    """
    x = np.asarray(x, dtype=float)
    d = x.size
    A = np.eye(d)
    c = np.zeros(d)
    for t in rounds:
        z = contexts[t - 1]
        A += np.outer(z, z)
        c += clicks[t - 1] * z
    theta = np.linalg.solve(A, c)
    return float(theta @ x), alpha * math.sqrt(float(x @ np.linalg.solve(A, x)))


def index_set_bound(size: int, stage: int, alpha: float, d: int) -> float:
    """Upper bound ``5 * 2**s * (1 + alpha**2) * sqrt(d * size)`` on an index-set size."""
    return 5.0 * 2.0**stage * (1.0 + alpha**2) * math.sqrt(d * size)
