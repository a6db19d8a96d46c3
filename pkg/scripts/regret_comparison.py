"""Regret curves of the two truthful mechanisms against the exploration-separated baseline.

    python3 scripts/regret_comparison.py --preset desk --out out/desk
"""
import argparse
import time

from truthful_ssa.harness import preset, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="desk", help="full | desk | ci")
    ap.add_argument("--out", default="out/regret")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    cfg = preset(args.preset, out_dir=args.out, seed=args.seed, workers=args.workers)
    t0 = time.perf_counter()
    res = run_experiment(cfg)
    base = res.curves["baseline"].final_mean
    print(f"T={cfg.T} iterations={cfg.iterations} ({time.perf_counter() - t0:.1f}s)")
    for m, c in res.curves.items():
        print(f"{m:>15}: final regret {c.final_mean:10.1f} +- {c.se[-1]:7.1f}"
              f"  ({c.final_mean / base:6.1%} of baseline)")
    if res.failures:
        print(f"{len(res.failures)} iterations failed; see {args.out}/summary.json")


if __name__ == "__main__":
    main()
