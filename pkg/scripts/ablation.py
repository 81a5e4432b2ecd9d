"""Train the default gated model and its gate-less twin, then print both specialization grids."""

import argparse

from vespa.ablation import grid_table, specialization_ablation
from vespa.experiments import BENCHMARK_EPOCHS, benchmark_data, diagonal_dominant, train_model
from vespa.synthdata import GenConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--coupling", type=float, default=2.0)
    ap.add_argument("--epochs", type=int, default=BENCHMARK_EPOCHS)
    args = ap.parse_args()

    bench = benchmark_data(GenConfig(seed=args.seed, coupling=args.coupling))
    for gated in (True, False):
        params = train_model(bench.train, gated, args.seed, args.epochs).params
        grid = specialization_ablation(params, bench.test)
        print("gated model" if gated else "gate ablated (single expert in every column)")
        print(grid_table(grid))
        if gated:
            print(f"diagonal is the row maximum: {diagonal_dominant(grid)}\n")


if __name__ == "__main__":
    main()
