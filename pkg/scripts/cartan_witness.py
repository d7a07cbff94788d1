"""Tangency residual of the Cartan J^1 chart as a function of the chart parameter size.

Non-involutivity shows up as a residual that grows with |u|, while the
involutive control (the graph Frobenius fixture) stays at round-off.
"""
import argparse
import csv
import sys
from dataclasses import dataclass

import numpy as np

from frechet_flow.fixtures import get_fixture
from frechet_flow.leaf import build_chart, tangency_check


@dataclass
class Config:
    fractions: tuple = (0.0, 0.1, 0.25, 0.5, 0.75, 0.99)
    directions: int = 16
    seed: int = 0


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=Config.seed)
    cfg = Config(seed=p.parse_args(argv).seed)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["fixture", "fraction_of_eta", "max_tangency_residual"])
    for name in ("cartan-j1", "graph-frobenius"):
        chart = build_chart(get_fixture(name))
        unit = chart.sample_params(cfg.directions, cfg.seed, radius=1.0)
        unit /= chart.param_norm(unit)[:, None]
        for frac in cfg.fractions:
            U = frac * chart.eta * unit
            worst = max(tangency_check(chart, u, 8, cfg.seed) for u in U)
            w.writerow([name, frac, f"{worst:.3e}"])


if __name__ == "__main__":
    main()
