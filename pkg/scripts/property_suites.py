"""Monotonicity and EPIC/EPIR property suites over a random instance grid.

    python3 scripts/property_suites.py --instances 100 --out out/suites
"""
import argparse
import time

from truthful_ssa.harness import GridConfig, epic_epir_suite, monotonicity_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=100)
    ap.add_argument("--seeds", type=int, default=200, help="resampling seeds per EPIC cell")
    ap.add_argument("--delta", type=float, default=0.1)
    ap.add_argument("--allocators", nargs="+",
                    default=["elinucb-s", "elinucb-sb", "suplinucb-s", "broken-probe"])
    ap.add_argument("--skip-epic", action="store_true")
    ap.add_argument("--out", default="out/suites")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    grid = GridConfig(instances=args.instances, resample_seeds=args.seeds,
                      allocators=tuple(args.allocators))

    t0 = time.perf_counter()
    mono = monotonicity_suite(grid, out_dir=args.out, workers=args.workers)
    print(f"monotonicity: {len(mono.violations)} violations in {mono.checks} checks "
          f"({time.perf_counter() - t0:.0f}s)")
    for kind, k in mono.details["violations_per_allocator"].items():
        print(f"  {kind:>12}: {k}")
    if args.skip_epic:
        return
    t0 = time.perf_counter()
    rep = epic_epir_suite(grid, args.delta, out_dir=args.out, workers=args.workers)
    d = rep.details
    print(f"EPIR: {d['epir_negative_rounds']} negative rounds of {d['epir_rounds_checked']}")
    print(f"EPIC: {d['epic_failures']} failing cells of {d['epic_cells']} "
          f"({time.perf_counter() - t0:.0f}s)")
    for c in d["cells"]:
        if not c["passed"]:
            print(f"  {c['mechanism']} seed={c['instance_seed']} {c['deviation']}: "
                  f"truthful {c['truthful_mean']:.3f} deviant {c['deviant_mean']:.3f} "
                  f"se {c['se']:.3f}")


if __name__ == "__main__":
    main()
