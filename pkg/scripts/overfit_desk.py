#!/usr/bin/env python3
"""Overfit the 3D and 2D networks on five synthetic desk-scale scenes and report IoU."""
import argparse

from sparsessc.training.desk import overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--network", choices=["3d", "2d", "both"], default="both")
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    kinds = ["3d", "2d"] if args.network == "both" else [args.network]
    for kind in kinds:
        overfit(kind, args.epochs, seed=args.seed)


if __name__ == "__main__":
    main()
