"""Deterministic low-discrepancy sample sets (scrambled Sobol, fixed seed)."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import qmc

DEFAULT_SEED = 0
SHRINK = 0.999  # keep samples strictly inside open balls


def sobol_cube(count, dim, seed=DEFAULT_SEED):
    """``count`` points of ``[-1, 1]^dim``."""
    if count <= 0:
        return np.zeros((0, dim))
    m = max(0, math.ceil(math.log2(count)))
    pts = qmc.Sobol(dim, scramble=True, seed=seed).random_base2(m)[:count]
    return 2.0 * pts - 1.0


def ball_points(count, dim, norm, seed=DEFAULT_SEED):
    """Points in the open unit ball of ``norm`` (a callable on ``(..., dim)`` arrays).

    The cube is mapped radially onto the ball: a point with sup-norm ``s``
    lands at level-norm radius ``s``.
    """
    cube = sobol_cube(count, dim, seed)
    sup = np.max(np.abs(cube), axis=-1)
    nrm = np.asarray(norm(cube))
    scale = np.divide(sup, nrm, out=np.zeros_like(sup), where=nrm > 0)
    return SHRINK * cube * scale[:, None]


def unit_vectors(count, dim, norm, seed=DEFAULT_SEED):
    """Points on the unit sphere of ``norm``."""
    cube = sobol_cube(count, dim, seed)
    nrm = np.asarray(norm(cube))
    keep = nrm > 1e-12
    return cube[keep] / nrm[keep, None]
