"""Domain types and seeded generators for the single-slot sponsored search simulator.

Everything here is immutable once built and a pure function of its seed. The
click tape holds an outcome for *every* agent and round, so two allocators (or
one allocator under two bid vectors) replayed on the same instance see exactly
the same click realizations.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

INSTANCE_SCHEMA_VERSION = 1
NORM_TOL = 1e-9
MAX_FEATURE_VALUE = 100
DEFAULT_COMBINATION_CAP = 10**6


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Context:
    """A user profile: nonnegative unit-norm feature point."""

    features: np.ndarray

    def __post_init__(self):
        x = _readonly(np.asarray(self.features, dtype=float))
        if x.ndim != 1 or x.size == 0:
            raise ValueError("context features must be a nonempty vector")
        if np.any(x < 0.0) or np.any(x > 1.0):
            raise ValueError("context coordinates must lie in [0, 1]")
        if abs(float(np.linalg.norm(x)) - 1.0) > NORM_TOL:
            raise ValueError("context must have unit Euclidean norm")
        object.__setattr__(self, "features", x)

    @property
    def d(self) -> int:
        return self.features.size


@dataclass(frozen=True)
class AgentSpec:
    id: int  # 1-based
    valuation: float
    bid: float
    theta: np.ndarray

    def __post_init__(self):
        theta = _readonly(np.asarray(self.theta, dtype=float))
        if self.id < 1:
            raise ValueError("agent ids are 1-based")
        if not 0.0 <= self.valuation <= 1.0:
            raise ValueError("valuation must lie in [0, 1]")
        if not self.bid > 0.0:
            raise ValueError("bid must be strictly positive")
        if theta.ndim != 1 or np.any(theta < 0.0):
            raise ValueError("theta must be a nonnegative vector")
        object.__setattr__(self, "theta", theta)

    def with_bid(self, bid: float) -> "AgentSpec":
        return AgentSpec(self.id, self.valuation, float(bid), self.theta)

    def ctr(self, x: np.ndarray) -> float:
        return float(self.theta @ x)


@dataclass(frozen=True)
class ContextCorpus:
    raw: np.ndarray  # integer feature values before normalization, (m, d)
    points: np.ndarray  # normalized contexts, (m, d)
    seed: object = None

    def __post_init__(self):
        object.__setattr__(self, "raw", _readonly(np.asarray(self.raw, dtype=np.int64)))
        object.__setattr__(self, "points", _readonly(np.asarray(self.points, dtype=float)))
        if self.points.ndim != 2 or self.points.shape[0] == 0:
            raise ValueError("corpus must hold at least one context")

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.size

    def __getitem__(self, k: int) -> Context:
        return Context(self.points[k])

    def __iter__(self) -> Iterator[Context]:
        return (Context(p) for p in self.points)


@dataclass(frozen=True)
class ClickTape:
    """Pre-drawn clicks ``outcomes[i, t-1]`` for agent ``i`` (0-based) at round ``t``."""

    outcomes: np.ndarray
    seed: object = None

    def __post_init__(self):
        out = np.asarray(self.outcomes)
        if out.ndim != 2:
            raise ValueError("tape must be an n x T table")
        if not np.all((out == 0) | (out == 1)):
            raise ValueError("tape entries must be 0 or 1")
        object.__setattr__(self, "outcomes", _readonly(out.astype(np.int8)))

    @property
    def n(self) -> int:
        return self.outcomes.shape[0]

    @property
    def T(self) -> int:
        return self.outcomes.shape[1]

    def click(self, agent: int, t: int) -> int:
        """Click of 0-based ``agent`` at 1-based round ``t``."""
        return int(self.outcomes[agent, t - 1])

    def oracle(self, t: int):
        return lambda agent: self.click(agent, t)

    def tobytes(self) -> bytes:
        return self.outcomes.tobytes()


@dataclass
class RoundRecord:
    t: int
    context_index: int
    designated: int  # 1-based round-robin agent
    allocated: int  # 1-based I_t
    click: int
    payment: float
    regret: float
    eta: tuple | None = None


def generate_corpus(seed, d: int = 4, values_per_feature: int = 4,
                    cap: int = DEFAULT_COMBINATION_CAP) -> ContextCorpus:
    """All ``values_per_feature**d`` combinations of per-feature values, unit-normalized.

    Each feature gets ``values_per_feature`` distinct integers from 0..100. If
    every feature drew a 0 the all-zero combination would exist, so the 0 of the
    last such feature is redrawn.
    """
    if d < 1 or values_per_feature < 1:
        raise ValueError("need d >= 1 and values_per_feature >= 1")
    if values_per_feature > MAX_FEATURE_VALUE + 1:
        raise ValueError("cannot draw more than 101 distinct values per feature")
    if values_per_feature**d > cap:  # exact integer test
        raise ValueError(f"{values_per_feature}^{d} combinations exceed cap {cap}")
    rng = _rng(seed)
    values = [np.sort(rng.choice(MAX_FEATURE_VALUE + 1, size=values_per_feature, replace=False))
              for _ in range(d)]
    while all(v[0] == 0 for v in values):
        last = values[-1]
        pool = np.setdiff1d(np.arange(1, MAX_FEATURE_VALUE + 1), last)
        last[0] = rng.choice(pool)
        values[-1] = np.sort(last)
    raw = np.array(list(itertools.product(*values)), dtype=np.int64).reshape(-1, d)
    points = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    return ContextCorpus(raw=raw, points=points, seed=seed)


def generate_agents(seed, n: int, d: int) -> list[AgentSpec]:
    """``n`` agents with unit-norm theta ~ U[0,1]^d and valuation ~ U[0,1]; bids truthful."""
    if n < 2:
        raise ValueError("need at least two agents")
    if d < 1:
        raise ValueError("need d >= 1")
    rng = _rng(seed)
    agents = []
    for i in range(n):
        theta = rng.random(d)
        while not np.any(theta > 0):
            theta = rng.random(d)
        theta = theta / np.linalg.norm(theta)
        v = rng.random()
        while v == 0.0:
            v = rng.random()
        agents.append(AgentSpec(id=i + 1, valuation=float(v), bid=float(v), theta=theta))
    return agents


def sample_context_sequence(seed, corpus: ContextCorpus, T: int) -> np.ndarray:
    """``T`` corpus indices drawn i.i.d. uniformly."""
    if corpus.size == 0:
        raise ValueError("empty corpus")
    if T < 1:
        raise ValueError("need T >= 1")
    return _readonly(_rng(seed).integers(0, corpus.size, size=T, dtype=np.int64))


def theta_matrix(agents: Sequence[AgentSpec]) -> np.ndarray:
    return np.vstack([a.theta for a in agents])


def generate_click_tape(seed, agents: Sequence[AgentSpec], contexts: np.ndarray) -> ClickTape:
    """Bernoulli(theta_i . x_t) clicks for every agent and round; bids play no part.

    ``contexts`` is the (T, d) matrix of contexts in round order.
    """
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    if contexts.shape[0] < 1:
        raise ValueError("need at least one round")
    probs = np.clip(theta_matrix(agents) @ contexts.T, 0.0, 1.0)
    u = _rng(seed).random(probs.shape)
    return ClickTape(outcomes=(u < probs).astype(np.int8), seed=seed)


@dataclass(frozen=True)
class Instance:
    """A fully materialized experiment: corpus, agents, context sequence, click tape."""

    corpus: ContextCorpus
    agents: tuple
    sequence: np.ndarray
    tape: ClickTape
    seed: object = None
    values_per_feature: int | None = None
    contexts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        seq = _readonly(np.asarray(self.sequence, dtype=np.int64))
        object.__setattr__(self, "sequence", seq)
        object.__setattr__(self, "contexts", _readonly(self.corpus.points[seq]))
        if self.tape.n != len(self.agents) or self.tape.T != seq.size:
            raise ValueError("tape shape does not match agents x rounds")

    @property
    def n(self) -> int:
        return len(self.agents)

    @property
    def d(self) -> int:
        return self.corpus.d

    @property
    def T(self) -> int:
        return self.sequence.size

    @property
    def bids(self) -> np.ndarray:
        return np.array([a.bid for a in self.agents])

    @property
    def valuations(self) -> np.ndarray:
        return np.array([a.valuation for a in self.agents])

    @property
    def thetas(self) -> np.ndarray:
        return theta_matrix(self.agents)

    def with_bids(self, bids) -> "Instance":
        agents = [a.with_bid(b) for a, b in zip(self.agents, bids)]
        return Instance(self.corpus, agents, self.sequence, self.tape, self.seed,
                        self.values_per_feature)

    def expected_values(self, bids=None) -> np.ndarray:
        """(T, n) matrix of bid-weighted true CTRs ``b_i * theta_i . x_t``."""
        b = self.bids if bids is None else np.asarray(bids, dtype=float)
        return (self.contexts @ self.thetas.T) * b


def make_instance(seed, n: int = 7, d: int = 4, T: int = 1000, values_per_feature: int = 4,
                  agents: Sequence[AgentSpec] | None = None) -> Instance:
    """Build an instance with independent child streams for each generator."""
    corpus_ss, agents_ss, seq_ss, tape_ss = np.random.SeedSequence(seed).spawn(4)
    corpus = generate_corpus(corpus_ss, d, values_per_feature)
    if agents is None:
        agents = generate_agents(agents_ss, n, d)
    seq = sample_context_sequence(seq_ss, corpus, T)
    tape = generate_click_tape(tape_ss, agents, corpus.points[seq])
    return Instance(corpus, agents, seq, tape, seed=seed, values_per_feature=values_per_feature)


def instance_to_dict(inst: Instance) -> dict:
    return {
        "schema_version": INSTANCE_SCHEMA_VERSION,
        "seed": inst.seed if isinstance(inst.seed, (int, type(None))) else str(inst.seed),
        "d": inst.d,
        "n": inst.n,
        "T": inst.T,
        "values_per_feature": inst.values_per_feature,
        "corpus": {"raw": inst.corpus.raw.tolist(), "normalized": inst.corpus.points.tolist()},
        "agents": [{"id": a.id, "valuation": a.valuation, "bid": a.bid, "theta": a.theta.tolist()}
                   for a in inst.agents],
        "sequence": inst.sequence.tolist(),
        "tape": ["".join("1" if v else "0" for v in row) for row in inst.tape.outcomes],
    }


def instance_from_dict(doc: dict) -> Instance:
    version = doc.get("schema_version")
    if version != INSTANCE_SCHEMA_VERSION:
        raise ValueError(f"unsupported instance schema_version {version!r}")
    corpus = ContextCorpus(raw=np.array(doc["corpus"]["raw"]),
                           points=np.array(doc["corpus"]["normalized"]))
    agents = [AgentSpec(a["id"], a["valuation"], a["bid"], np.array(a["theta"]))
              for a in doc["agents"]]
    tape = ClickTape(np.array([[int(ch) for ch in row] for row in doc["tape"]], dtype=np.int8))
    inst = Instance(corpus, agents, np.array(doc["sequence"]), tape, seed=doc.get("seed"),
                    values_per_feature=doc.get("values_per_feature"))
    if (inst.n, inst.d, inst.T) != (doc["n"], doc["d"], doc["T"]):
        raise ValueError("instance header disagrees with its payload")
    return inst


def save_instance(inst: Instance, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(instance_to_dict(inst)))
    return path


def load_instance(path) -> Instance:
    return instance_from_dict(json.loads(Path(path).read_text()))


def pseudo_regret_increment(instance: Instance, t: int, allocated: int, bids=None) -> float:
    """Expected-value gap between the best agent and 0-based ``allocated`` at round ``t``.

    Uses true CTRs and the submitted bids; the realized click plays no part.
    """
    b = instance.bids if bids is None else np.asarray(bids, dtype=float)
    v = b * (instance.thetas @ instance.contexts[t - 1])
    return float(v.max() - v[allocated])


def pseudo_regret(instance: Instance, allocated: np.ndarray, bids=None) -> np.ndarray:
    """Per-round regret increments for a whole allocation trace."""
    v = instance.expected_values(bids)
    return v.max(axis=1) - v[np.arange(v.shape[0]), allocated]
