#!/usr/bin/env python3
"""Generate a procedural demo dataset (sar/opt pairs, optional clouds)."""

import argparse

from cloudgan.demo import make_demo_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("root", help="dataset directory to create")
    ap.add_argument("--count", type=int, default=16)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--clouds", action="store_true",
                    help="also write cloudy/mask quadruples")
    args = ap.parse_args()
    coverages = [0.1, 0.3, 0.5, 0.7] if args.clouds else None
    ids = make_demo_dataset(args.root, args.count, args.size, args.seed,
                            coverages=coverages)
    print(f"wrote {len(ids)} pairs under {args.root}")


if __name__ == "__main__":
    main()
