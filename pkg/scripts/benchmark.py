"""Gated model vs single-head baseline on the synthetic benchmark.

    python scripts/benchmark.py                    # coupling 2, seeds 0 1 2
    python scripts/benchmark.py --coupling 0 1 2   # sweep
"""

import argparse
import logging
import time

import numpy as np

from vespa.experiments import BENCHMARK_EPOCHS, compare_gated_baseline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--coupling", type=float, nargs="+", default=[2.0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=BENCHMARK_EPOCHS)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    print(f"{'kappa':>5} {'seed':>4} {'gated mA':>9} {'base mA':>8} {'gated F1':>9} {'base F1':>8} {'view acc':>20}")
    for k in args.coupling:
        t0 = time.perf_counter()
        rows = compare_gated_baseline(k, tuple(args.seeds), args.epochs)
        for r in rows:
            va = " ".join(f"{100 * a:.1f}" for a in r.gated.per_view_accuracy)
            print(f"{k:5.1f} {r.seed:4d} {100 * r.gated.mA:9.2f} {100 * r.baseline.mA:8.2f} "
                  f"{100 * r.gated.example_f1:9.2f} {100 * r.baseline.example_f1:8.2f} {va:>20}")
        print(f"kappa={k}: mean gap mA {np.mean([r.mA_gap for r in rows]):+.2f}, "
              f"F1 {np.mean([r.f1_gap for r in rows]):+.2f} points ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
