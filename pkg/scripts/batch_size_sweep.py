"""Final regret of M-ELinUCB-SB across batch sizes on shared instances.

    python3 scripts/batch_size_sweep.py --T 10000 --iterations 10
"""
import argparse

from truthful_ssa.harness import ExperimentConfig, sweep_batch_size


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=10_000)
    ap.add_argument("--iterations", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bs", type=int, nargs="+", default=[1, 5, 10, 25, 50, 75, 100, 125, 150])
    ap.add_argument("--out", default="out/bs_sweep")
    args = ap.parse_args()
    cfg = ExperimentConfig(T=args.T, iterations=args.iterations, seed=args.seed,
                           out_dir=args.out)
    table = sweep_batch_size(cfg, bs_values=args.bs)
    for bs, row in table.items():
        print(f"bs={bs:>4}: {row['mean']:9.1f} +- {row['se']:6.1f}")


if __name__ == "__main__":
    main()
