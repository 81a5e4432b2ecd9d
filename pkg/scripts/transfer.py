"""Pretrain on view-labeled data, fine-tune on a view-less dataset with the view branch frozen."""

import argparse

from vespa.experiments import BENCHMARK_EPOCHS, transfer_experiment
from vespa.metrics import format_table


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=BENCHMARK_EPOCHS)
    args = ap.parse_args()

    res = transfer_experiment(args.seed, args.epochs)
    print("transferred (view branch frozen):")
    print(format_table(res.transferred))
    print("gate-less baseline trained from scratch:")
    print(format_table(res.baseline))
    print(f"mA gap {res.mA_gap:+.2f} points; view branch unchanged: {res.view_checksum_before == res.view_checksum_after}; "
          f"expert update norm {res.expert_update_norm:.3f}")


if __name__ == "__main__":
    main()
