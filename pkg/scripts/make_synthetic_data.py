#!/usr/bin/env python3
"""Write a synthetic crystal corpus (JSON lines) for desk-scale experiments.

Families: perov (fixed-site CSP family), toy (two-atom torus density family),
dng (small random de novo family).
"""

import argparse

import numpy as np

from flowcryst.io import save_crystals
from flowcryst.synthetic import (
    make_dng_family,
    make_perov_family,
    make_toy_torus_family,
)

FAMILIES = {
    "perov": make_perov_family,
    "toy": make_toy_torus_family,
    "dng": make_dng_family,
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--family", choices=sorted(FAMILIES), required=True)
    parser.add_argument("--count", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)
    crystals = FAMILIES[args.family](args.count, rng)
    save_crystals(args.out, crystals)
    print(f"wrote {len(crystals)} {args.family} crystals to {args.out}")


if __name__ == "__main__":
    main()
