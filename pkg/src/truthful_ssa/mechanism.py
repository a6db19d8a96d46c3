"""Truthful mechanisms built from monotone allocators via self-resampling.

Bids are resampled once per run (``y_i = eta_i * b_i``), the allocator runs on
``y`` against the instance's click tape, and each clicked allocation is charged
``b_i`` (``eta_i == 1``) or rebated ``b_i * (1/delta - 1)`` (``eta_i < 1``).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from numba import njit

from .core import Instance, RoundRecord, pseudo_regret
from .elinucb import ELinUCB, Trace
from .linmodel import LearnerStack, rank_one_update
from .suplinucb import SupLinUCB

REPORT_SCHEMA_VERSION = 1
ALLOCATORS = ("elinucb-s", "elinucb-sb", "suplinucb-s", "oracle", "broken-probe")
CSV_COLUMNS = ("t", "context_index", "allocated", "click", "payment", "regret",
               "cumulative_regret")


@dataclass
class ResampleOutcome:
    eta: np.ndarray
    y: np.ndarray
    resampled: np.ndarray  # True where the delta-probability branch was taken
    eps: np.ndarray


def eta_from_draw(eps: float, delta: float) -> float:
    return eps ** (1.0 / (1.0 - delta))


def resample(bids, delta: float, seed) -> ResampleOutcome:
    """Self-resampling of a bid vector; draws are independent of the bid values."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    b = np.asarray(bids, dtype=float)
    if np.any(b <= 0):
        raise ValueError("bids must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    coin = rng.random(b.size)
    eps = 1.0 - rng.random(b.size)  # (0, 1], keeps eta > 0
    resampled = coin < delta
    eta = np.where(resampled, eps ** (1.0 / (1.0 - delta)), 1.0)
    return ResampleOutcome(eta=eta, y=eta * b, resampled=resampled, eps=eps)


def payment_multiplier(eta: float, delta: float) -> float:
    return 1.0 if eta == 1.0 else 1.0 - 1.0 / delta


def charge(click: int, eta: float, bid: float, delta: float, per_click: bool = True) -> float:
    """Payment of the allocated agent for one round (negative means a rebate)."""
    if per_click and not click:
        return 0.0
    return bid * payment_multiplier(eta, delta)


@dataclass
class AllocatorParams:
    alpha_elinucb: float = 1.0
    alpha_suplinucb: float | None = None  # None: calibrated from kappa
    kappa: float = 0.05
    batch_size: int = 100
    horizon: int | None = None  # SupLinUCB-S horizon; defaults to instance.T


def oracle_trace(instance: Instance, bids) -> Trace:
    alloc = np.argmax(instance.expected_values(bids), axis=1).astype(np.int64)
    return Trace(alloc, np.zeros(alloc.size, dtype=np.int8), ("oracle",))


def run_allocator(kind: str, instance: Instance, bids, params: AllocatorParams | None = None):
    """Run a registered allocator on ``bids`` over the whole instance; returns (trace, diagnostics)."""
    p = params or AllocatorParams()
    bids = np.asarray(bids, dtype=float)
    ctx, tape = instance.contexts, instance.tape.outcomes
    if kind == "elinucb-s":
        return ELinUCB(bids, instance.d, p.alpha_elinucb, 1).run(ctx, tape), {}
    if kind == "elinucb-sb":
        return ELinUCB(bids, instance.d, p.alpha_elinucb, p.batch_size).run(ctx, tape), {}
    if kind == "broken-probe":
        alloc = ELinUCB(bids, instance.d, p.alpha_elinucb, 1, learn_on_exploit=True)
        return alloc.run(ctx, tape), {}
    if kind == "suplinucb-s":
        horizon = p.horizon or instance.T
        alloc = SupLinUCB(bids, instance.d, max(horizon, 2), p.alpha_suplinucb, p.kappa)
        trace = alloc.run(ctx, tape)
        return trace, alloc.diagnostics()
    if kind == "oracle":
        return oracle_trace(instance, bids), {}
    raise ValueError(f"unknown allocator {kind!r}; expected one of {ALLOCATORS}")


def designated_column(kind: str, T: int, n: int, batch_size: int = 1) -> np.ndarray:
    t = np.arange(1, T + 1)
    if kind == "elinucb-sb":
        t = (t - 1) // batch_size + 1
    return 1 + t % n


@dataclass
class RunReport:
    """Per-round outcome of one mechanism run; agents are 1-based in all exports."""

    mechanism: str
    instance: Instance = field(repr=False)
    allocated: np.ndarray  # 0-based
    tags: np.ndarray
    tag_names: tuple
    designated: np.ndarray
    payments: np.ndarray  # payment of the allocated agent each round
    regret: np.ndarray
    eta: np.ndarray | None = None
    bids: np.ndarray | None = None
    delta: float | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.allocated.size

    @property
    def clicks(self) -> np.ndarray:
        return self.instance.tape.outcomes[self.allocated, np.arange(self.T)].astype(np.int64)

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def round_utilities(self) -> np.ndarray:
        """Realized utility of the allocated agent each round: ``r * v - p``."""
        v = self.instance.valuations[self.allocated]
        return self.clicks * v - self.payments

    def agent_utilities(self) -> np.ndarray:
        return np.bincount(self.allocated, weights=self.round_utilities, minlength=self.instance.n)

    def agent_clicks(self) -> np.ndarray:
        return np.bincount(self.allocated, weights=self.clicks, minlength=self.instance.n)

    def agent_payments(self) -> np.ndarray:
        return np.bincount(self.allocated, weights=self.payments, minlength=self.instance.n)

    def payment_matrix(self) -> np.ndarray:
        """(n, T) payments; zero for every agent not allocated in a round."""
        m = np.zeros((self.instance.n, self.T))
        m[self.allocated, np.arange(self.T)] = self.payments
        return m

    @property
    def center_utility(self) -> float:
        return float(self.payments.sum())

    @property
    def social_welfare(self) -> float:
        return float((self.clicks * self.instance.valuations[self.allocated]).sum())

    def records(self) -> Iterator[RoundRecord]:
        eta = None if self.eta is None else tuple(float(e) for e in self.eta)
        for k in range(self.T):
            yield RoundRecord(t=k + 1, context_index=int(self.instance.sequence[k]),
                              designated=int(self.designated[k]),
                              allocated=int(self.allocated[k]) + 1, click=int(self.clicks[k]),
                              payment=float(self.payments[k]), regret=float(self.regret[k]),
                              eta=eta)

    def tag_counts(self) -> dict:
        counts = np.bincount(self.tags.astype(np.int64), minlength=len(self.tag_names))
        return {name: int(counts[k]) for k, name in enumerate(self.tag_names)}

    def summary(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "mechanism": self.mechanism,
            "T": self.T,
            "n": self.instance.n,
            "delta": self.delta,
            "eta": None if self.eta is None else self.eta.tolist(),
            "final_regret": float(self.regret.sum()),
            "center_utility": self.center_utility,
            "social_welfare": self.social_welfare,
            "agent_utilities": self.agent_utilities().tolist(),
            "agent_clicks": self.agent_clicks().astype(int).tolist(),
            "rule_counts": self.tag_counts(),
            "diagnostics": self.diagnostics,
        }

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        cum = self.cumulative_regret
        clicks = self.clicks
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for k in range(self.T):
                w.writerow((k + 1, int(self.instance.sequence[k]), int(self.allocated[k]) + 1,
                            int(clicks[k]), repr(float(self.payments[k])),
                            repr(float(self.regret[k])), repr(float(cum[k]))))
        return path

    def write_summary(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.summary(), indent=2, sort_keys=True))
        return path


def run_mechanism(kind: str, instance: Instance, delta: float = 0.1, seed=0,
                  params: AllocatorParams | None = None, charge_on: str = "click",
                  eta=None) -> RunReport:
    """Resample the instance's bids once, allocate on the modified bids, settle payments.

    ``eta`` overrides the resampling draw (useful to pin the all-ones branch).
    ``charge_on="allocation"`` charges every allocation instead of clicked ones.
    """
    if charge_on not in ("click", "allocation"):
        raise ValueError("charge_on must be 'click' or 'allocation'")
    p = params or AllocatorParams()
    bids = instance.bids
    if eta is None:
        eta = resample(bids, delta, seed).eta
    else:
        if not 0.0 < delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        eta = np.asarray(eta, dtype=float)
    trace, diag = run_allocator(kind, instance, eta * bids, p)
    alloc = trace.allocated
    clicks = instance.tape.outcomes[alloc, np.arange(instance.T)]
    mult = np.where(eta == 1.0, 1.0, 1.0 - 1.0 / delta)
    pay = bids[alloc] * mult[alloc]
    if charge_on == "click":
        pay = pay * clicks
    return RunReport(
        mechanism=f"m-{kind}",
        instance=instance,
        allocated=alloc,
        tags=trace.tags,
        tag_names=trace.tag_names,
        designated=designated_column(kind, instance.T, instance.n, p.batch_size),
        payments=pay,
        regret=pseudo_regret(instance, alloc),
        eta=eta,
        bids=bids,
        delta=delta,
        diagnostics=diag,
    )


@njit(cache=True)
def _explore_rounds(contexts, tape, lam, A, A_inv, c, theta, counts):
    n = counts.shape[0]
    for t in range(1, lam + 1):
        i = t % n
        counts[i] = rank_one_update(A[i], A_inv[i], c[i], theta[i], contexts[t - 1],
                                    float(tape[i, t - 1]), counts[i])


def default_lambda(n: int, T: int) -> int:
    """Exploration length ``n * ceil(T**(2/3))``, computed in exact integer arithmetic."""
    k = round(T ** (2.0 / 3.0))
    while k**3 < T**2:
        k += 1
    while (k - 1) ** 3 >= T**2:
        k -= 1
    return n * k


def explore_separated_baseline(instance: Instance, lam: int | None = None) -> RunReport:
    """Learn-then-commit comparison mechanism.

    Rounds ``1..lam`` go round-robin for free while estimates are fitted; afterwards
    estimates are frozen, the best estimated value wins, and each click is charged
    the runner-up's estimated value divided by the winner's estimated CTR.
    """
    n, T = instance.n, instance.T
    if lam is None:
        lam = default_lambda(n, T)
    if lam < 0 or lam > T:
        raise ValueError(f"exploration length {lam} must lie in [0, T={T}]")
    bids = instance.bids
    learners = LearnerStack(n, instance.d)
    A, A_inv, c, theta, counts = learners.arrays()
    _explore_rounds(instance.contexts, instance.tape.outcomes, lam, A, A_inv, c, theta, counts)

    alloc = np.empty(T, dtype=np.int64)
    tags = np.zeros(T, dtype=np.int8)
    pay = np.zeros(T)
    alloc[:lam] = np.arange(1, lam + 1) % n
    if lam < T:
        ctx = instance.contexts[lam:]
        est = ctx @ theta.T
        vals = est * bids
        win = np.argmax(vals, axis=1)
        rows = np.arange(win.size)
        others = vals.copy()
        others[rows, win] = -np.inf
        second = np.max(others, axis=1) if n > 1 else np.zeros(win.size)
        ctr = est[rows, win]
        per_click = np.where(ctr > 0, second / np.where(ctr > 0, ctr, 1.0), 0.0)
        per_click = np.clip(per_click, 0.0, bids[win])
        alloc[lam:] = win
        tags[lam:] = 1
        clicks = instance.tape.outcomes[win, np.arange(lam, T)]
        pay[lam:] = per_click * clicks
    return RunReport(
        mechanism="baseline",
        instance=instance,
        allocated=alloc,
        tags=tags,
        tag_names=("exploration", "exploitation"),
        designated=1 + np.arange(1, T + 1) % n,
        payments=pay,
        regret=pseudo_regret(instance, alloc),
        bids=bids,
        diagnostics={"lambda": int(lam)},
    )
