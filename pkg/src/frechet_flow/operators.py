"""Graded linear maps between towers and their uniform norm.

A :class:`GradedOperator` is a family ``L_n`` commuting with the bondings of
source and target.  Its seminorms are ``p_n = max_{k<=n} ||L_k||`` (level
operator norms) and ``||L||_inf = max_n p_n`` on the truncated tower.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotCoherent, NotInjective, ShapeMismatch
from .tower import Tower

OPERATOR_COHERENCE_TOL = 1e-9
INJECTIVE_RTOL = 1e-10
VERTEX_ENUM_MAX_DIM = 16


@dataclass(frozen=True, eq=False)
class GradedOperator:
    source: Tower
    target: Tower
    levels: tuple

    def __post_init__(self):
        mats = []
        for n, m in enumerate(self.levels):
            a = np.array(m, dtype=float)
            a.setflags(write=False)
            mats.append(a)
        object.__setattr__(self, "levels", tuple(mats))
        if len(mats) != len(self.source.levels) or len(mats) != len(self.target.levels):
            raise ShapeMismatch("operator needs one matrix per level of source and target")
        for n, a in enumerate(mats):
            expected = (self.target.dims[n], self.source.dims[n])
            if a.shape != expected:
                raise ShapeMismatch(f"level {n} matrix has shape {a.shape}, expected {expected}")

    @property
    def depth(self):
        return len(self.levels) - 1

    def apply(self, x):
        from .tower import Thread

        coords = x.coords if isinstance(x, Thread) else x
        return Thread(tuple(L @ np.asarray(c, dtype=float) for L, c in zip(self.levels, coords)))

    def __add__(self, other):
        _same_spaces(self, other)
        return GradedOperator(self.source, self.target, tuple(a + b for a, b in zip(self.levels, other.levels)))

    def __sub__(self, other):
        _same_spaces(self, other)
        return GradedOperator(self.source, self.target, tuple(a - b for a, b in zip(self.levels, other.levels)))

    def __mul__(self, s):
        return GradedOperator(self.source, self.target, tuple(float(s) * a for a in self.levels))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return compose(self, other)

    def to_json(self):
        return {"operator": {"levels": [a.tolist() for a in self.levels]}}


def _same_spaces(a, b):
    if a.source is not b.source or a.target is not b.target:
        if a.source.dims != b.source.dims or a.target.dims != b.target.dims:
            raise ShapeMismatch("operators act between different towers")


def identity(t):
    return GradedOperator(t, t, tuple(np.eye(d) for d in t.dims))


def compose(L, M):
    """``L o M`` for ``M: T1 -> T2`` and ``L: T2 -> T3``."""
    if M.target.dims != L.source.dims:
        raise ShapeMismatch("operators are not composable")
    return GradedOperator(M.source, L.target, tuple(a @ b for a, b in zip(L.levels, M.levels)))


def operator_from_json(doc, source, target=None):
    target = source if target is None else target
    body = doc["operator"] if "operator" in doc else doc
    return GradedOperator(source, target, tuple(np.array(m, dtype=float) for m in body["levels"]))


# -- coherence ----------------------------------------------------------------

def coherence_defect(L):
    worst = 0.0
    for n in range(L.depth):
        lhs = L.target.bondings[n].map @ L.levels[n + 1]
        rhs = L.levels[n] @ L.source.bondings[n].map
        worst = max(worst, float(np.max(np.abs(lhs - rhs), initial=0.0)))
    return worst


def check_coherence(L):
    """``(coherent, max_defect)``: every bonding square commutes to 1e-9."""
    d = coherence_defect(L)
    return d <= OPERATOR_COHERENCE_TOL, d


def _require_coherent(L):
    ok, d = check_coherence(L)
    if not ok:
        raise NotCoherent(f"operator squares fail to commute (defect {d:.3g})")


# -- level operator norms ------------------------------------------------------

def level_operator_norm(A, src, tgt):
    """``sup ||A x||_tgt / ||x||_src`` for the norms carried by two :class:`BanachLevel` s.

    Weighted norms are weighted euclidean norms, so they reduce to the
    euclidean case after rescaling.  Any sup over a max-norm unit ball is a
    convex maximisation attained at a cube vertex.
    """
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    s_src = src.sqrt_weights()
    s_tgt = tgt.sqrt_weights()
    if src.norm_kind != "max" and tgt.norm_kind != "max":
        B = (s_tgt[:, None] * A) / s_src[None, :]
        return float(np.linalg.norm(B, 2))
    if src.norm_kind == "max" and tgt.norm_kind == "max":
        return float(np.max(np.sum(np.abs(A), axis=1)))
    if tgt.norm_kind == "max":
        B = A / s_src[None, :]
        return float(np.max(np.linalg.norm(B, axis=1)))
    # max-norm source, (weighted) euclidean target
    B = s_tgt[:, None] * A
    d = B.shape[1]
    if d <= VERTEX_ENUM_MAX_DIM:
        best = 0.0
        for signs in itertools.product((1.0, -1.0), repeat=d - 1):
            v = np.concatenate([[1.0], signs])
            best = max(best, float(np.linalg.norm(B @ v)))
        return best
    # too many vertices: the Frobenius bound sqrt(d) * ||B||_2 is certified
    return float(np.sqrt(d) * np.linalg.norm(B, 2))


def level_lower_bound(A, src, tgt):
    """A certified ``c >= 0`` with ``||A x||_tgt >= c ||x||_src`` for all ``x``."""
    A = np.asarray(A, dtype=float)
    m, d = A.shape
    if m < d:
        return 0.0
    s_src = src.sqrt_weights()
    s_tgt = tgt.sqrt_weights()
    B = (s_tgt[:, None] * A) / s_src[None, :]
    smin = float(np.linalg.svd(B, compute_uv=False)[-1])
    # ||y||_max >= ||y||_2 / sqrt(m)  and  ||x||_2 >= ||x||_max
    if tgt.norm_kind == "max":
        smin /= np.sqrt(m)
    return smin


@dataclass(frozen=True)
class OperatorNorms:
    p: tuple
    norm_inf: float


def operator_seminorms(L):
    _require_coherent(L)
    level = [level_operator_norm(A, L.source.levels[n], L.target.levels[n]) for n, A in enumerate(L.levels)]
    p = tuple(float(v) for v in np.maximum.accumulate(level))
    return OperatorNorms(p, p[-1])


def norm_inf(L):
    return operator_seminorms(L).norm_inf


def is_uniformly_bounded(L, C):
    if C <= 0:
        raise ValueError("bound C must be positive")
    return operator_seminorms(L).norm_inf <= C


# -- injectivity and openness -------------------------------------------------

@dataclass(frozen=True)
class LevelInjectivity:
    level: int
    injective: bool
    closed_range: bool
    smallest_singular_value: float


def injectivity_profile(L):
    """Per-level rank analysis; ``L`` is injective iff every level map is."""
    _require_coherent(L)
    out = []
    for n, A in enumerate(L.levels):
        s = np.linalg.svd(A, compute_uv=False)
        rows, cols = A.shape
        smin = float(s[-1]) if rows >= cols and s.size else 0.0
        smax = float(s[0]) if s.size else 0.0
        injective = rows >= cols and smax > 0 and smin > INJECTIVE_RTOL * smax
        out.append(LevelInjectivity(n, bool(injective), True, smin))
    return out


def is_injective(L):
    return all(r.injective for r in injectivity_profile(L))


def openness_margin(L):
    """Radius ``m`` such that every coherent ``T`` with ``||T - L||_inf < m`` stays injective.

    Half of the smallest certified lower bound ``inf ||L_n x|| / ||x||`` over
    levels.  Returns ``None`` when ``L`` is not injective.
    """
    if not is_injective(L):
        return None
    lows = [level_lower_bound(A, L.source.levels[n], L.target.levels[n]) for n, A in enumerate(L.levels)]
    return 0.5 * min(lows)


def require_openness_margin(L):
    m = openness_margin(L)
    if m is None:
        raise NotInjective("operator has a nontrivial kernel at some level")
    return m


# -- exponential ---------------------------------------------------------------

def _nilpotent_exp(A):
    """Exact truncated series when some power of ``A`` vanishes identically, else ``None``."""
    d = A.shape[0]
    term = np.eye(d)
    total = np.eye(d)
    for k in range(1, d + 1):
        term = term @ A / k
        if not np.any(term):
            return total
        total = total + term
    term = term @ A
    return total if not np.any(term) else None


def matrix_exp(A):
    A = np.asarray(A, dtype=float)
    if A.shape[0] != A.shape[1]:
        raise ShapeMismatch("exponential needs square matrices")
    exact = _nilpotent_exp(A)
    return exact if exact is not None else scipy.linalg.expm(A)


def exp_tower(A):
    """Level-wise matrix exponential of a coherent square operator."""
    if A.source.dims != A.target.dims:
        raise ShapeMismatch("exp_tower needs source = target")
    _require_coherent(A)
    return GradedOperator(A.source, A.target, tuple(matrix_exp(a) for a in A.levels))


def inverse(L):
    return GradedOperator(L.target, L.source, tuple(np.linalg.inv(a) for a in L.levels))


# -- random coherent operators ------------------------------------------------

def random_coherent_operator(source, target, rng, scale=1.0):
    """Bottom-up construction ``L_{n+1} = (D^t)^+ L_n D^s + N_t Y``.

    ``N_t`` spans the kernel of the target bonding, so ``D^t L_{n+1} = L_n D^s``
    holds for every choice of ``Y``.
    """
    if len(source.levels) != len(target.levels):
        raise ShapeMismatch("towers have different depths")
    mats = [rng.standard_normal((target.dims[0], source.dims[0]))]
    for n in range(source.depth):
        Ds = source.bondings[n].map
        Dt = target.bondings[n].map
        base = np.linalg.pinv(Dt) @ mats[-1] @ Ds
        Nt = scipy.linalg.null_space(Dt)
        if Nt.shape[1]:
            base = base + Nt @ rng.standard_normal((Nt.shape[1], source.dims[n + 1]))
        mats.append(base)
    return GradedOperator(source, target, tuple(scale * m for m in mats))
