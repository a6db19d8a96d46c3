"""Re-estimate one EPIC cell with many resampling seeds.

Utilities under self-resampling are heavy-tailed (rebates arrive only when the
agent is resampled), so a small-sample cell can look like a violation. This
script re-runs a cell with a large seed count on an independent seed stream.

    python3 scripts/epic_cell_check.py --instance-seed 939901752 --mechanism m-elinucb-sb
"""
import argparse

import numpy as np

from truthful_ssa.harness import GridConfig, grid_instances
from truthful_ssa.mechanism import resample, run_allocator


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instance-seed", type=int, required=True)
    ap.add_argument("--mechanism", default="m-elinucb-sb")
    ap.add_argument("--seeds", type=int, default=20_000)
    ap.add_argument("--delta", type=float, default=0.1)
    ap.add_argument("--instances", type=int, default=100, help="grid size the seed came from")
    args = ap.parse_args()

    grid = GridConfig(instances=args.instances)
    rng = np.random.default_rng(grid.seed + 1)  # same target draw as the suite
    found = None
    for seed, inst in grid_instances(grid, grid.epic_T):
        target = int(rng.integers(inst.n))
        if seed == args.instance_seed:
            found = (inst, target)
            break
    if found is None:
        raise SystemExit(f"instance seed {args.instance_seed} is not in the grid")
    inst, tgt = found
    v = inst.valuations
    tape, rows = inst.tape.outcomes, np.arange(inst.T)
    factors = (1.0,) + tuple(grid.deviations)
    util = np.zeros((len(factors), args.seeds))
    cache = {}
    for s in range(args.seeds):
        eta = resample(v, args.delta, (args.instance_seed, 10**6 + s)).eta
        mult = np.where(eta == 1.0, 1.0, 1.0 - 1.0 / args.delta)
        for k, f in enumerate(factors):
            b = v.copy()
            b[tgt] = min(1.0, max(1e-3, f * v[tgt]))
            y = eta * b
            key = y.tobytes()
            if key not in cache:
                cache[key] = run_allocator(args.mechanism[2:], inst, y, grid.params())[0].allocated
            a = cache[key]
            c = tape[a, rows]
            util[k, s] = (c * v[a] - b[a] * mult[a] * c)[a == tgt].sum()
    print(f"{args.mechanism} instance {args.instance_seed} agent {tgt + 1}, {args.seeds} seeds")
    print(f"  truthful mean {util[0].mean():.4f}")
    for k, f in enumerate(factors[1:], 1):
        diff = util[k] - util[0]
        print(f"  x{f:g}: gain {diff.mean():+.4f} +- {diff.std(ddof=1) / np.sqrt(args.seeds):.4f}")


if __name__ == "__main__":
    main()
