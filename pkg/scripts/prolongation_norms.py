"""Sampled anchor norms along prolongation towers for several seed norms."""
import argparse
import csv
import sys
from dataclasses import dataclass

import numpy as np

from frechet_flow.algebroid import AnchoredLevel
from frechet_flow.fixtures import build_prolongation_tower, default_prolongation_seed, norm_recursion_violations
from frechet_flow.poly import Polynomial


@dataclass
class Config:
    seed_norms: tuple = (0.0, 0.5, 1.0, 3.0)
    depth: int = 3
    samples: int = 1000


def seeded(norm):
    base = default_prolongation_seed()
    anchor = Polynomial.constant(1, np.array([[norm, 0.0]]))
    return AnchoredLevel(base.base_level, base.fiber_level, anchor, base.structure)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--depth", type=int, default=Config.depth)
    p.add_argument("--samples", type=int, default=Config.samples)
    args = p.parse_args(argv)
    cfg = Config(depth=args.depth, samples=args.samples)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["seed_norm", "level", "fiber_dim", "sampled_sup", "recursion_bound", "violations"])
    for s in cfg.seed_norms:
        T = build_prolongation_tower(seeded(s), cfg.depth)
        violations, sups = norm_recursion_violations(T, cfg.samples)
        for n, lv in enumerate(T.levels):
            bound = "" if n == 0 else f"{max(sups[n - 1], 1.0):.6g}"
            w.writerow([s, n, lv.fiber_dim, f"{sups[n]:.6g}", bound, violations])


if __name__ == "__main__":
    main()
