"""Elimination-based ex-post monotone allocation: ELinUCB-S and its batched form ELinUCB-SB.

Agents are addressed by 0-based position here; the 1-based ids only appear in
reports. ``batch_size=1`` is ELinUCB-S.

Confidence bounds are stored per unit of bid (CTR units) and multiplied by the
bid only where they are compared across agents. Learning happens only on the
designated agent's exploration rounds, so the stored bounds are the same floats
under any bid vector, which is what the monotonicity argument needs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .linmodel import LearnerStack, dot, quad_form, rank_one_update

EXPLORE = 0
EXPLOIT = 1
PHASES = ("exploration", "exploitation")

# batch bookkeeping slots
_DESIG, _EXPLORING, _FILLED, _OPEN = 0, 1, 2, 3


def designated_agent(t: int, n: int) -> int:
    """Round-robin agent (1-based) for round or batch index ``t``: ``1 + (t mod n)``."""
    if t < 1:
        raise ValueError("rounds are 1-indexed")
    return 1 + t % n


def tighten_bounds(lo: float, hi: float, new_lo: float, new_hi: float) -> tuple[float, float]:
    """Intersect ``[lo, hi]`` with a candidate interval; collapse to the midpoint if disjoint."""
    return _tighten(lo, hi, new_lo, new_hi)


@njit(cache=True)
def _tighten(lo, hi, new_lo, new_hi):
    if not lo < hi:
        return lo, hi
    a = max(lo, new_lo)
    b = min(hi, new_hi)
    if a < b:
        return a, b
    m = (lo + hi) / 2.0
    return m, m


@njit(cache=True)
def _refine(i, z, alpha, A_inv, theta, lo, hi):
    if lo[i] < hi[i]:
        est = dot(theta[i], z)
        w = alpha * math.sqrt(quad_form(A_inv[i], z))
        lo[i], hi[i] = _tighten(lo[i], hi[i], est - w, est + w)


@njit(cache=True)
def _eliminate(bids, lo, hi, active):
    best = -np.inf
    for i in range(bids.shape[0]):
        if active[i]:
            v = bids[i] * lo[i]
            if v > best:
                best = v
    for i in range(bids.shape[0]):
        if active[i] and bids[i] * hi[i] < best:
            active[i] = False


@njit(cache=True)
def _exploit_choice(bids, theta, active, x):
    best = -np.inf
    arg = -1
    for i in range(bids.shape[0]):
        if active[i]:
            v = bids[i] * dot(theta[i], x)
            if v > best:
                best = v
                arg = i
    return arg


@njit(cache=True)
def _decide(t, x, bids, bs, theta, active, batch, xbar):
    if (t - 1) % bs == 0:
        j = ((t - 1) // bs + 1) % bids.shape[0]
        batch[_DESIG] = j
        batch[_EXPLORING] = 1 if active[j] else 0
        batch[_FILLED] = 0
        batch[_OPEN] = 1
        xbar[:] = 0.0
    if batch[_EXPLORING] == 1:
        return batch[_DESIG], EXPLORE
    return _exploit_choice(bids, theta, active, x), EXPLOIT


@njit(cache=True)
def _close_batch(bids, alpha, A_inv, theta, lo, hi, active, batch, xbar):
    if batch[_OPEN] == 1:
        if batch[_EXPLORING] == 1 and batch[_FILLED] > 0:
            _refine(batch[_DESIG], xbar, alpha, A_inv, theta, lo, hi)
        _eliminate(bids, lo, hi, active)
        batch[_OPEN] = 0


@njit(cache=True)
def _observe(t, i, phase, x, r, bids, alpha, bs, learn_on_exploit,
             A, A_inv, c, theta, counts, lo, hi, active, batch, xbar):
    if phase == EXPLORE:
        counts[i] = rank_one_update(A[i], A_inv[i], c[i], theta[i], x, r, counts[i])
        batch[_FILLED] += 1
        k = batch[_FILLED]
        for a in range(x.shape[0]):
            xbar[a] = ((k - 1) * xbar[a] + x[a]) / k
    elif learn_on_exploit:
        # deliberately broken variant: bid-dependent allocations feed learning
        counts[i] = rank_one_update(A[i], A_inv[i], c[i], theta[i], x, r, counts[i])
        _refine(i, x, alpha, A_inv, theta, lo, hi)
    if t % bs == 0:
        _close_batch(bids, alpha, A_inv, theta, lo, hi, active, batch, xbar)


@njit(cache=True)
def _run(contexts, tape, bids, alpha, bs, learn_on_exploit,
         A, A_inv, c, theta, counts, lo, hi, active, batch, xbar, alloc, phases):
    for t in range(1, contexts.shape[0] + 1):
        x = contexts[t - 1]
        i, phase = _decide(t, x, bids, bs, theta, active, batch, xbar)
        r = float(tape[i, t - 1])
        _observe(t, i, phase, x, r, bids, alpha, bs, learn_on_exploit,
                 A, A_inv, c, theta, counts, lo, hi, active, batch, xbar)
        alloc[t - 1] = i
        phases[t - 1] = phase
    _close_batch(bids, alpha, A_inv, theta, lo, hi, active, batch, xbar)


@dataclass
class AllocationDecision:
    agent: int  # 0-based
    phase: str
    updated: bool
    rule: str | None = None
    stage: int | None = None


@dataclass
class Trace:
    """Whole-run allocation record: 0-based agents and integer tags per round."""

    allocated: np.ndarray
    tags: np.ndarray
    tag_names: tuple

    def clicks(self, tape: np.ndarray, agent: int) -> np.ndarray:
        """Cumulative clicks of ``agent`` after each round."""
        won = self.allocated == agent
        return np.cumsum(won & (tape[agent] == 1))


class ELinUCB:
    """ELinUCB-SB allocator (ELinUCB-S when ``batch_size == 1``).

    ``learn_on_exploit=True`` builds a deliberately non-monotone probe that also
    learns on exploitation rounds; it exists to check that the monotonicity
    suite can catch a violation.
    """

    def __init__(self, bids, d: int, alpha: float = 1.0, batch_size: int = 1,
                 learn_on_exploit: bool = False):
        self.bids = np.array(bids, dtype=float)
        if self.bids.ndim != 1 or self.bids.size < 1:
            raise ValueError("bids must be a nonempty vector")
        if np.any(self.bids < 0):
            raise ValueError("bids must be nonnegative")
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.n = self.bids.size
        self.d = d
        self.alpha = float(alpha)
        self.batch_size = int(batch_size)
        self.learn_on_exploit = bool(learn_on_exploit)
        self.learners = LearnerStack(self.n, d)
        self.lo = np.zeros(self.n)
        self.hi = np.ones(self.n)
        self.active = np.ones(self.n, dtype=np.bool_)
        self.batch = np.zeros(4, dtype=np.int64)
        self.xbar = np.zeros(d)
        self.t = 0

    # -- per-round interface -------------------------------------------------
    def step(self, t: int, x, click) -> AllocationDecision:
        """Allocate round ``t``; ``click(agent)`` is read for the allocated agent only."""
        if t != self.t + 1:
            raise ValueError(f"expected round {self.t + 1}, got {t}")
        x = np.ascontiguousarray(x, dtype=float)
        i, phase = _decide(t, x, self.bids, self.batch_size, self.learners.theta, self.active,
                           self.batch, self.xbar)
        r = click(i) if callable(click) else click
        A, A_inv, c, theta, counts = self.learners.arrays()
        _observe(t, i, phase, x, float(r), self.bids, self.alpha, self.batch_size,
                 self.learn_on_exploit, A, A_inv, c, theta, counts, self.lo, self.hi,
                 self.active, self.batch, self.xbar)
        self.t = t
        updated = phase == EXPLORE or self.learn_on_exploit
        if not self.active.any():
            raise AssertionError("active set became empty")
        return AllocationDecision(int(i), PHASES[phase], updated)

    def flush(self) -> None:
        """Close a trailing partial batch (bound update on its mean, then eliminate)."""
        A, A_inv, c, theta, counts = self.learners.arrays()
        _close_batch(self.bids, self.alpha, A_inv, theta, self.lo, self.hi, self.active,
                     self.batch, self.xbar)

    def run(self, contexts, tape) -> Trace:
        """Play every remaining round of ``contexts`` against a (n, T) click table."""
        contexts = np.ascontiguousarray(contexts, dtype=float)
        tape = np.ascontiguousarray(tape, dtype=np.int8)
        if self.t != 0:
            raise ValueError("run() starts from a fresh allocator")
        T = contexts.shape[0]
        alloc = np.empty(T, dtype=np.int64)
        phases = np.empty(T, dtype=np.int8)
        A, A_inv, c, theta, counts = self.learners.arrays()
        _run(contexts, tape, self.bids, self.alpha, self.batch_size, self.learn_on_exploit,
             A, A_inv, c, theta, counts, self.lo, self.hi, self.active, self.batch, self.xbar,
             alloc, phases)
        self.t = T
        return Trace(alloc, phases, PHASES)

    # -- building blocks -----------------------------------------------------
    def explore_round(self, j: int, x, click: int) -> None:
        """Allocate designated agent ``j`` for one round and refine its bounds on ``x``."""
        if not self.active[j]:
            raise ValueError(f"agent {j} is not active")
        x = np.ascontiguousarray(x, dtype=float)
        A, A_inv, c, theta, counts = self.learners.arrays()
        counts[j] = rank_one_update(A[j], A_inv[j], c[j], theta[j], x, float(click), counts[j])
        _refine(j, x, self.alpha, A_inv, theta, self.lo, self.hi)

    def exploit_round(self, x) -> AllocationDecision:
        x = np.ascontiguousarray(x, dtype=float)
        i = _exploit_choice(self.bids, self.learners.theta, self.active, x)
        return AllocationDecision(int(i), PHASES[EXPLOIT], False)

    def eliminate(self) -> None:
        _eliminate(self.bids, self.lo, self.hi, self.active)

    def run_batch(self, batch_index: int, contexts, clicks) -> list[AllocationDecision]:
        """Play batch ``batch_index`` (1-based); ``clicks[k]`` is the (n,) click row of its k-th round."""
        start = (batch_index - 1) * self.batch_size + 1
        if start != self.t + 1:
            raise ValueError(f"batch {batch_index} does not start at round {self.t + 1}")
        out = []
        for k, x in enumerate(contexts):
            row = clicks[k]
            out.append(self.step(start + k, x, lambda i, row=row: int(row[i])))
        if len(out) < self.batch_size:
            self.flush()
        return out

    # -- inspection ----------------------------------------------------------
    @property
    def active_set(self) -> frozenset:
        return frozenset(int(i) for i in np.flatnonzero(self.active))

    @property
    def bounds(self) -> np.ndarray:
        """(n, 2) lower/upper bounds in value units (bid x CTR)."""
        return np.column_stack([self.bids * self.lo, self.bids * self.hi])

    @property
    def ctr_bounds(self) -> np.ndarray:
        return np.column_stack([self.lo, self.hi])

    def learner(self, i: int):
        return self.learners.state(i)

    def snapshot(self) -> dict:
        return {
            "kind": "elinucb",
            "t": self.t,
            "learners": self.learners.snapshot(),
            "lo": self.lo.copy(),
            "hi": self.hi.copy(),
            "active": self.active.copy(),
            "batch": self.batch.copy(),
            "xbar": self.xbar.copy(),
        }

    def restore(self, snap: dict) -> None:
        self.t = int(snap["t"])
        self.learners.restore(snap["learners"])
        for name in ("lo", "hi", "active", "batch", "xbar"):
            getattr(self, name)[...] = snap[name]


def elinucb_s(bids, d, alpha=1.0, **kw) -> ELinUCB:
    return ELinUCB(bids, d, alpha=alpha, batch_size=1, **kw)


def elinucb_sb(bids, d, alpha=1.0, batch_size=100, **kw) -> ELinUCB:
    return ELinUCB(bids, d, alpha=alpha, batch_size=batch_size, **kw)
