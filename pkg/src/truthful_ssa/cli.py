"""Command-line entry point.

Exit status: 0 on success, 1 on configuration errors, 2 when a property suite
finds a violation. Every command prints one summary line of the form
``<command>: key=value ...`` (suites: ``<command>: <k> violations (<m> checks)``).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .core import load_instance, save_instance
from .harness import (ConfigError, ExperimentConfig, GridConfig, build_instance,
                      epic_epir_suite, iteration_seeds, load_config, monotonicity_suite, preset,
                      run_experiment, run_one, sweep_batch_size)

OUT_ENV = "TRUTHFUL_SSA_OUT"
COMMANDS = ("gen-instance", "run", "sweep-bs", "suite-monotone", "suite-epic", "suite-epir",
            "report")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="truthful-ssa", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--preset", help="full | desk | ci")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("--workers", type=int)
    p.add_argument("--allocator", action="append",
                   help="allocator for suites (repeatable); e.g. elinucb-s, broken-probe")
    p.add_argument("--delta", type=float)
    p.add_argument("--bs", type=int, help="batch size for ELinUCB-SB")
    p.add_argument("--instances", type=int, help="grid size override for suites")
    p.add_argument("--instance", help="pre-generated instance file for `run`")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise ConfigError("config: give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    elif args.preset:
        cfg = preset(args.preset)
    else:
        cfg = preset("ci")
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.workers is not None:
        over["workers"] = args.workers
    if args.delta is not None:
        over["delta"] = args.delta
    if args.bs is not None:
        over["batch_size"] = args.bs
    over["out_dir"] = args.out or os.environ.get(OUT_ENV) or cfg.out_dir
    grid = cfg.grid
    g_over = {}
    if args.instances is not None:
        g_over["instances"] = args.instances
    if args.seed is not None:
        g_over["seed"] = args.seed
    if args.bs is not None:
        g_over["batch_size"] = args.bs
    if g_over:
        grid = dataclasses.replace(grid, **g_over)
    try:
        return dataclasses.replace(cfg, grid=grid, **over)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def cmd_gen_instance(cfg, args) -> int:
    inst_seed = iteration_seeds(cfg.seed, 1)[0][0]
    inst = build_instance(cfg, inst_seed)
    path = save_instance(inst, Path(cfg.out_dir) / "instance.json")
    print(f"gen-instance: path={path} n={inst.n} d={inst.d} T={inst.T} seed={inst_seed}")
    return 0


def cmd_run(cfg, args) -> int:
    out = Path(cfg.out_dir)
    if args.instance:
        inst = load_instance(args.instance)
        rs_seed = iteration_seeds(cfg.seed, 1)[0][1]
        finals = {}
        for m in cfg.mechanisms:
            rep = run_one(m, inst, cfg, rs_seed)
            rep.write_csv(out / f"{m}.csv")
            rep.write_summary(out / f"{m}.json")
            finals[m] = float(rep.regret.sum())
        summary = {"final_mean_regret": finals, "failures": []}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    else:
        res = run_experiment(cfg)
        summary = res.summary()
    parts = " ".join(f"{m}={_fmt(v)}" for m, v in summary["final_mean_regret"].items())
    print(f"run: final_mean_regret {parts} failures={len(summary['failures'])}")
    return 0 if not summary["failures"] else 1


def cmd_sweep_bs(cfg, args) -> int:
    table = sweep_batch_size(cfg)
    parts = " ".join(f"bs{bs}={_fmt(row['mean'])}" for bs, row in table.items())
    print(f"sweep-bs: mean_regret {parts}")
    return 0


def _grid_with_allocators(cfg, args, mechanisms: bool) -> GridConfig:
    grid = cfg.grid
    if args.allocator:
        if mechanisms:
            grid = dataclasses.replace(grid, epic_mechanisms=tuple(f"m-{a}" for a in args.allocator))
        else:
            grid = dataclasses.replace(grid, allocators=tuple(args.allocator))
        cfg = dataclasses.replace(cfg, grid=grid)  # re-validates names
    return cfg.grid


def cmd_suite_monotone(cfg, args) -> int:
    grid = _grid_with_allocators(cfg, args, mechanisms=False)
    rep = monotonicity_suite(grid, out_dir=cfg.out_dir, workers=cfg.workers)
    print(f"suite-monotone: {len(rep.violations)} violations ({rep.checks} checks)")
    return 0 if rep.ok else 2


def cmd_suite_epic(cfg, args) -> int:
    grid = _grid_with_allocators(cfg, args, mechanisms=True)
    rep = epic_epir_suite(grid, cfg.delta, out_dir=cfg.out_dir, workers=cfg.workers)
    n_bad = rep.details["epic_failures"]
    print(f"suite-epic: {n_bad} violations ({rep.details['epic_cells']} checks)")
    return 0 if n_bad == 0 else 2


def cmd_suite_epir(cfg, args) -> int:
    grid = _grid_with_allocators(cfg, args, mechanisms=True)
    rep = epic_epir_suite(grid, cfg.delta, out_dir=cfg.out_dir, workers=cfg.workers)
    n_bad = rep.details["epir_negative_rounds"]
    print(f"suite-epir: {n_bad} violations ({rep.details['epir_rounds_checked']} checks)")
    return 0 if n_bad == 0 else 2


def cmd_report(cfg, args) -> int:
    out = Path(cfg.out_dir)
    found = False
    summary = out / "summary.json"
    if summary.exists():
        found = True
        doc = json.loads(summary.read_text())
        parts = " ".join(f"{m}={_fmt(v)}" for m, v in doc["final_mean_regret"].items())
        print(f"report: final_mean_regret {parts} failures={len(doc.get('failures', []))}")
    for name in ("monotonicity_report.json", "epic_epir_report.json"):
        path = out / name
        if path.exists():
            found = True
            doc = json.loads(path.read_text())
            print(f"report: {doc['suite']} {doc['violation_count']} violations "
                  f"({doc['checks']} checks)")
    if not found:
        raise ConfigError(f"out: no reports found under {out}")
    return 0


HANDLERS = {
    "gen-instance": cmd_gen_instance,
    "run": cmd_run,
    "sweep-bs": cmd_sweep_bs,
    "suite-monotone": cmd_suite_monotone,
    "suite-epic": cmd_suite_epic,
    "suite-epir": cmd_suite_epir,
    "report": cmd_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg, args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
