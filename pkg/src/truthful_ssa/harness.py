"""Experiment orchestration: regret curves, batch-size sweeps and property suites."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (Instance, generate_agents, make_instance, pseudo_regret,
                   pseudo_regret_increment, save_instance)
from .mechanism import (ALLOCATORS, AllocatorParams, explore_separated_baseline, resample,
                        run_allocator, run_mechanism)

log = logging.getLogger(__name__)

CONFIG_SCHEMA_VERSION = 1
MECHANISMS = ("m-elinucb-s", "m-elinucb-sb", "m-suplinucb-s", "baseline", "oracle")

__all__ = ["pseudo_regret_increment", "pseudo_regret", "ExperimentConfig", "GridConfig",
           "run_experiment", "sweep_batch_size", "monotonicity_suite", "epic_epir_suite",
           "PRESETS", "load_config", "checkpoints"]


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; the message names the field."""


@dataclass
class GridConfig:
    instances: int = 100
    n_min: int = 2
    n_max: int = 5
    d_values: tuple = (2, 4)
    T: int = 2000
    values_per_feature: int = 4
    bid_levels: tuple = tuple(round(0.1 * k, 1) for k in range(1, 11))
    allocators: tuple = ("elinucb-s", "elinucb-sb", "suplinucb-s")
    batch_size: int = 20
    alpha_elinucb: float = 1.0
    alpha_suplinucb: float | None = 1.0
    seed: int = 2024
    # EPIC / EPIR grid
    epic_T: int = 1000
    epic_mechanisms: tuple = ("m-elinucb-sb", "m-suplinucb-s")
    deviations: tuple = (0.25, 0.5, 0.75, 1.25, 1.5)
    resample_seeds: int = 200
    se_multiplier: float = 3.0

    def params(self) -> AllocatorParams:
        return AllocatorParams(alpha_elinucb=self.alpha_elinucb,
                               alpha_suplinucb=self.alpha_suplinucb,
                               batch_size=self.batch_size)


@dataclass
class ExperimentConfig:
    n: int = 7
    d: int = 4
    T: int = 100_000
    batch_size: int = 100
    alpha_elinucb: float = 1.0
    alpha_suplinucb: float | None = None  # None: calibrated from kappa
    delta: float = 0.1
    kappa: float = 0.05
    values_per_feature: int = 4
    seed: int = 0
    iterations: int = 10
    mechanisms: tuple = ("m-elinucb-sb", "m-suplinucb-s", "baseline")
    fixed_agents: bool = False
    baseline_lambda: int | None = None
    charge_on: str = "click"
    workers: int = 1
    out_dir: str = "out"
    write_rounds: bool = False
    bs_values: tuple = (1, 5, 10, 25, 50, 75, 100, 125, 150)
    grid: GridConfig = field(default_factory=GridConfig)

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = _build(GridConfig, self.grid, "grid.")
        for name in ("mechanisms", "bs_values"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.n < 2:
            raise ConfigError("n: need at least two agents")
        if self.d < 1:
            raise ConfigError("d: must be >= 1")
        if self.T < 2:
            raise ConfigError("T: must be >= 2")
        if self.iterations < 1:
            raise ConfigError("iterations: must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be >= 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta: must lie in (0, 1)")
        if not 0 < self.kappa < 1:
            raise ConfigError("kappa: must lie in (0, 1)")
        if self.charge_on not in ("click", "allocation"):
            raise ConfigError("charge_on: must be 'click' or 'allocation'")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        for m in self.mechanisms:
            if m not in MECHANISMS:
                raise ConfigError(f"mechanisms: unknown mechanism {m!r}")
        if self.baseline_lambda is not None and not 0 <= self.baseline_lambda <= self.T:
            raise ConfigError("baseline_lambda: must lie in [0, T]")
        g = self.grid
        if not 2 <= g.n_min <= g.n_max:
            raise ConfigError("grid.n_min/n_max: need 2 <= n_min <= n_max")
        for a in g.allocators:
            if a not in ALLOCATORS:
                raise ConfigError(f"grid.allocators: unknown allocator {a!r}")
        for m in g.epic_mechanisms:
            if m not in MECHANISMS or not m.startswith("m-"):
                raise ConfigError(f"grid.epic_mechanisms: unknown mechanism {m!r}")
        if g.resample_seeds < 2:
            raise ConfigError("grid.resample_seeds: must be >= 2")

    def params(self) -> AllocatorParams:
        return AllocatorParams(alpha_elinucb=self.alpha_elinucb,
                               alpha_suplinucb=self.alpha_suplinucb,
                               kappa=self.kappa, batch_size=self.batch_size)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["schema_version"] = CONFIG_SCHEMA_VERSION
        return doc


def _build(cls, doc: dict, prefix: str = ""):
    names = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in names:
            raise ConfigError(f"{prefix}{key}: unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in doc:
            v = doc[f.name]
            if isinstance(v, list):
                v = tuple(v)
            kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{prefix}: {exc}") from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    version = doc.pop("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version!r}")
    return _build(ExperimentConfig, doc)


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    return config_from_dict(doc)


PRESETS = {
    # long-running: ~hours on one core
    "full": dict(T=1_000_000, iterations=40),
    "desk": dict(T=100_000, iterations=10),
    "ci": dict(T=10_000, iterations=3),
}
PRESET_ALIASES = {"paper-full": "full", "paper-desk": "desk"}


def preset(name: str, **overrides) -> ExperimentConfig:
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return ExperimentConfig(**{**PRESETS[name], **overrides})


def checkpoints(T: int) -> np.ndarray:
    """Powers of two up to ``T`` plus ``T`` itself (1-based rounds)."""
    pts = [1 << k for k in range(int(math.log2(T)) + 1) if (1 << k) <= T]
    if pts[-1] != T:
        pts.append(T)
    return np.array(pts, dtype=np.int64)


@dataclass
class RegretCurve:
    mechanism: str
    checkpoints: np.ndarray
    per_iteration: np.ndarray  # (iterations, checkpoints)

    @property
    def mean(self) -> np.ndarray:
        return self.per_iteration.mean(axis=0)

    @property
    def se(self) -> np.ndarray:
        k = self.per_iteration.shape[0]
        if k < 2:
            return np.zeros(self.checkpoints.size)
        return self.per_iteration.std(axis=0, ddof=1) / math.sqrt(k)

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])


def iteration_seeds(seed: int, iterations: int) -> list[tuple[int, int]]:
    """(instance seed, resampling seed) per iteration, from independent child streams."""
    out = []
    for child in np.random.SeedSequence(seed).spawn(iterations):
        a, b = child.generate_state(2)
        out.append((int(a), int(b)))
    return out


def build_instance(cfg: ExperimentConfig, instance_seed: int) -> Instance:
    agents = None
    if cfg.fixed_agents:
        agents = generate_agents(np.random.SeedSequence(cfg.seed).spawn(1)[0], cfg.n, cfg.d)
    return make_instance(instance_seed, cfg.n, cfg.d, cfg.T, cfg.values_per_feature, agents)


def run_one(mechanism: str, inst: Instance, cfg: ExperimentConfig, resample_seed: int):
    if mechanism == "baseline":
        return explore_separated_baseline(inst, cfg.baseline_lambda)
    if mechanism == "oracle":
        return run_mechanism("oracle", inst, cfg.delta, eta=np.ones(inst.n),
                             charge_on=cfg.charge_on)
    return run_mechanism(mechanism[2:], inst, cfg.delta, resample_seed, cfg.params(),
                         charge_on=cfg.charge_on)


def _iteration_job(args):
    cfg, k, inst_seed, rs_seed = args
    pts = checkpoints(cfg.T)
    try:
        inst = build_instance(cfg, inst_seed)
        out = {}
        for m in cfg.mechanisms:
            rep = run_one(m, inst, cfg, rs_seed)
            out[m] = {"curve": rep.cumulative_regret[pts - 1], "summary": rep.summary()}
            if cfg.write_rounds:
                rep.write_csv(Path(cfg.out_dir) / "rounds" / f"{m}_iter{k:03d}.csv")
        return k, out, None
    except Exception:  # reported per iteration, never dropped
        return k, None, traceback.format_exc()


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    curves: dict
    summaries: dict  # mechanism -> list of per-iteration run summaries
    failures: list

    def final_regrets(self, mechanism: str) -> np.ndarray:
        return self.curves[mechanism].per_iteration[:, -1]

    def summary(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "final_mean_regret": {m: c.final_mean for m, c in self.curves.items()},
            "final_se": {m: float(c.se[-1]) for m, c in self.curves.items()},
            "final_regret_per_iteration": {m: c.per_iteration[:, -1].tolist()
                                           for m, c in self.curves.items()},
            "failures": self.failures,
            "runs": self.summaries,
        }


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """One run per mechanism per iteration on a shared fresh instance; mean +- SE curves."""
    seeds = iteration_seeds(cfg.seed, cfg.iterations)
    jobs = [(cfg, k, a, b) for k, (a, b) in enumerate(seeds)]
    results = sorted(_map(_iteration_job, jobs, cfg.workers), key=lambda r: r[0])
    failures = [{"iteration": k, "error": err} for k, _, err in results if err is not None]
    for f in failures:
        log.error("iteration %d failed:\n%s", f["iteration"], f["error"])
    ok = [(k, out) for k, out, err in results if err is None]
    pts = checkpoints(cfg.T)
    curves, summaries = {}, {}
    for m in cfg.mechanisms:
        per = np.array([out[m]["curve"] for _, out in ok]).reshape(len(ok), pts.size)
        curves[m] = RegretCurve(m, pts, per)
        summaries[m] = [out[m]["summary"] for _, out in ok]
    res = ExperimentResult(cfg, curves, summaries, failures)
    if write:
        write_experiment(res, Path(cfg.out_dir))
    return res


def write_experiment(res: ExperimentResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with (out / "curves.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("mechanism", "iteration", "t", "cumulative_regret"))
        for m, c in res.curves.items():
            for k, row in enumerate(c.per_iteration):
                for t, v in zip(c.checkpoints, row):
                    w.writerow((m, k, int(t), repr(float(v))))
    with (out / "curves_mean.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("mechanism", "t", "mean", "se"))
        for m, c in res.curves.items():
            for t, mu, se in zip(c.checkpoints, c.mean, c.se):
                w.writerow((m, int(t), repr(float(mu)), repr(float(se))))
    (out / "summary.json").write_text(json.dumps(res.summary(), indent=2, sort_keys=True))


def sweep_batch_size(cfg: ExperimentConfig, bs_values=None, write: bool = True) -> dict:
    """Mean final regret of M-ELinUCB-SB per batch size, on the same instances for every size."""
    bs_values = tuple(bs_values or cfg.bs_values)
    seeds = iteration_seeds(cfg.seed, cfg.iterations)
    finals = {bs: [] for bs in bs_values}
    for inst_seed, rs_seed in seeds:
        inst = build_instance(cfg, inst_seed)
        for bs in bs_values:
            p = dataclasses.replace(cfg.params(), batch_size=bs)
            rep = run_mechanism("elinucb-sb", inst, cfg.delta, rs_seed, p, cfg.charge_on)
            finals[bs].append(float(rep.regret.sum()))
    table = {bs: {"mean": float(np.mean(v)),
                  "se": float(np.std(v, ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0,
                  "per_iteration": v} for bs, v in finals.items()}
    if write:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "bs_sweep.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("batch_size", "mean_regret", "se"))
            for bs, row in table.items():
                w.writerow((bs, repr(row["mean"]), repr(row["se"])))
        (out / "bs_sweep.json").write_text(json.dumps(
            {"T": cfg.T, "iterations": cfg.iterations, "results": {str(k): v for k, v in
                                                                    table.items()}}, indent=2))
    return table


# -- property suites -----------------------------------------------------------------------

def grid_instances(grid: GridConfig, T: int | None = None) -> list[tuple[int, Instance]]:
    rng = np.random.default_rng(grid.seed)
    out = []
    for k in range(grid.instances):
        n = int(rng.integers(grid.n_min, grid.n_max + 1))
        d = int(rng.choice(grid.d_values))
        seed = int(rng.integers(2**31))
        out.append((seed, make_instance(seed, n, d, T or grid.T, grid.values_per_feature)))
    return out


@dataclass
class SuiteReport:
    name: str
    checks: int
    violations: list
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"suite": self.name, "checks": self.checks, "violations": self.violations,
                "violation_count": len(self.violations), **self.details}

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path


def _suite_cell(args):
    seed, inst, kind, levels, params = args
    viol, checks = [], 0
    tape = inst.tape.outcomes
    for i in range(inst.n):
        prev = prev_bid = None
        for b in levels:
            bids = inst.bids.copy()
            bids[i] = b
            trace, _ = run_allocator(kind, inst, bids, params)
            cum = trace.clicks(tape, i)
            if prev is not None:
                checks += 1
                bad = np.flatnonzero(cum < prev)
                if bad.size:
                    t = int(bad[0])
                    viol.append({"instance_seed": seed, "n": inst.n, "d": inst.d, "T": inst.T,
                                 "allocator": kind, "agent": i + 1, "bid_low": prev_bid,
                                 "bid_high": float(b), "other_bids": inst.bids.tolist(),
                                 "round": t + 1, "clicks_low": int(prev[t]),
                                 "clicks_high": int(cum[t])})
            prev, prev_bid = cum, float(b)
    return viol, checks


def monotonicity_suite(grid: GridConfig, out_dir=None, workers: int = 1) -> SuiteReport:
    """Coupled replays over a bid grid: cumulative clicks must never drop as own bid rises."""
    levels = tuple(sorted(grid.bid_levels))
    params = grid.params()
    jobs = [(seed, inst, kind, levels, params) for seed, inst in grid_instances(grid)
            for kind in grid.allocators]
    results = _map(_suite_cell, jobs, workers)
    violations = [v for vs, _ in results for v in vs]
    checks = sum(c for _, c in results)
    per = {k: sum(1 for v in violations if v["allocator"] == k) for k in grid.allocators}
    report = SuiteReport("monotonicity", checks, violations,
                         {"instances": grid.instances, "allocators": list(grid.allocators),
                          "violations_per_allocator": per})
    if out_dir is not None:
        out = Path(out_dir)
        report.write(out / "monotonicity_report.json")
        seen = set()
        for v in violations:
            if v["instance_seed"] in seen:
                continue
            seen.add(v["instance_seed"])
            inst = make_instance(v["instance_seed"], v["n"], v["d"], v["T"],
                                 grid.values_per_feature)
            save_instance(inst, out / "bundles" / f"instance_{v['instance_seed']}.json")
    return report


def _epic_cell(args):
    seed, inst, mech, target, deviations, n_seeds, delta, params, k_se = args
    kind = mech[2:]
    v = inst.valuations
    tape = inst.tape.outcomes
    rows = np.arange(inst.T)
    cache = {}
    bid_sets = [("truthful", v[target])] + [(f"x{f:g}", min(1.0, max(1e-3, f * v[target])))
                                             for f in deviations]
    util = np.zeros((len(bid_sets), n_seeds))
    epir_bad = 0
    for s in range(n_seeds):
        eta = resample(v, delta, (seed, s)).eta
        mult = np.where(eta == 1.0, 1.0, 1.0 - 1.0 / delta)
        for k, (_, bi) in enumerate(bid_sets):
            bids = v.copy()
            bids[target] = bi
            y = eta * bids
            key = y.tobytes()
            if key not in cache:
                cache[key] = run_allocator(kind, inst, y, params)[0].allocated
            alloc = cache[key]
            clicks = tape[alloc, rows]
            pay = bids[alloc] * mult[alloc] * clicks
            u = clicks * v[alloc] - pay
            if k == 0:
                epir_bad += int(np.count_nonzero(u < 0))
            util[k, s] = u[alloc == target].sum()
    cells = []
    for k in range(1, len(bid_sets)):
        diff = util[k] - util[0]
        se = float(diff.std(ddof=1) / math.sqrt(n_seeds))
        gain = float(diff.mean())
        cells.append({"instance_seed": seed, "mechanism": mech, "agent": target + 1,
                      "valuation": float(v[target]), "deviation": bid_sets[k][0],
                      "bid": float(bid_sets[k][1]), "truthful_mean": float(util[0].mean()),
                      "deviant_mean": float(util[k].mean()), "se": se,
                      "passed": bool(gain <= k_se * se + 1e-12)})
    return cells, epir_bad, n_seeds * inst.T


def epic_epir_suite(grid: GridConfig, delta: float = 0.1, out_dir=None,
                    workers: int = 1) -> SuiteReport:
    """EPIR exactly (no negative truthful round utility) and EPIC statistically.

    For each instance one target agent is varied; its mean utility over resampling
    seeds under truthful bidding must be at least the deviant mean minus
    ``se_multiplier`` standard errors of the paired (same-seed) difference.
    """
    params = grid.params()
    rng = np.random.default_rng(grid.seed + 1)
    jobs = []
    for seed, inst in grid_instances(grid, grid.epic_T):
        target = int(rng.integers(inst.n))
        for mech in grid.epic_mechanisms:
            jobs.append((seed, inst, mech, target, grid.deviations, grid.resample_seeds, delta,
                         params, grid.se_multiplier))
    results = _map(_epic_cell, jobs, workers)
    cells = [c for cs, _, _ in results for c in cs]
    epir_bad = sum(b for _, b, _ in results)
    epir_checked = sum(n for _, _, n in results)
    failures = [c for c in cells if not c["passed"]]
    violations = failures + ([{"epir_negative_rounds": epir_bad}] if epir_bad else [])
    report = SuiteReport("epic-epir", len(cells), violations,
                         {"epic_cells": len(cells), "epic_failures": len(failures),
                          "epir_negative_rounds": epir_bad, "epir_rounds_checked": epir_checked,
                          "delta": delta, "cells": cells})
    if out_dir is not None:
        report.write(Path(out_dir) / "epic_epir_report.json")
    return report
