"""Truncated projective sequences of finite-dimensional normed spaces.

A :class:`Tower` holds levels ``0..N`` and the consecutive bonding maps
``lambda_i^{i+1}: level i+1 -> level i``; every composite ``lambda_i^j`` is
generated from those and cached.  A :class:`Thread` is a tuple of level vectors
that agree under the bondings, i.e. a point of the (truncated) limit.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexOutOfRange, NotSurjective, SchemaError, ShapeMismatch

COHERENCE_TOL = 1e-9
RANK_TOL = 1e-10  # relative to the largest singular value
DEFAULT_DEPTH = 4

NORM_KINDS = ("euclidean", "max", "weighted")


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BanachLevel:
    index: int
    dim: int
    norm_kind: str = "euclidean"
    weights: tuple | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ShapeMismatch(f"level {self.index}: dim must be >= 1")
        if self.norm_kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.norm_kind!r}")
        if self.norm_kind == "weighted":
            if self.weights is None or len(self.weights) != self.dim:
                raise ShapeMismatch(f"level {self.index}: need {self.dim} weights")
            if any(w <= 0 for w in self.weights):
                raise ValueError("weights must be positive")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        elif self.weights is not None:
            raise ValueError("weights only apply to the weighted norm")

    def norm(self, x):
        """Level norm; accepts a batch along leading axes."""
        x = np.asarray(x, dtype=float)
        if self.norm_kind == "euclidean":
            return np.linalg.norm(x, axis=-1)
        if self.norm_kind == "max":
            return np.max(np.abs(x), axis=-1)
        return np.sqrt(np.sum(np.asarray(self.weights) * x * x, axis=-1))

    def sqrt_weights(self):
        if self.norm_kind == "weighted":
            return np.sqrt(np.asarray(self.weights))
        return np.ones(self.dim)

    def to_json(self):
        if self.norm_kind == "weighted":
            norm = {"weighted": list(self.weights)}
        else:
            norm = self.norm_kind
        return {"dim": self.dim, "norm": norm}


@dataclass(frozen=True)
class BondingMap:
    from_index: int
    to_index: int
    map: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "map", _frozen(self.map))
        if self.from_index != self.to_index + 1:
            raise ShapeMismatch("bonding maps connect consecutive levels only")
        if self.map.ndim != 2:
            raise ShapeMismatch("bonding map must be a matrix")


@dataclass(frozen=True, eq=False)
class Thread:
    coords: tuple

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(_frozen(c) for c in self.coords))

    @property
    def depth(self):
        return len(self.coords) - 1

    def __getitem__(self, n):
        return self.coords[n]

    def __sub__(self, other):
        return Thread(tuple(a - b for a, b in zip(self.coords, other.coords)))

    def __add__(self, other):
        return Thread(tuple(a + b for a, b in zip(self.coords, other.coords)))

    def scaled(self, s):
        return Thread(tuple(s * c for c in self.coords))

    def tolist(self):
        return [c.tolist() for c in self.coords]


@dataclass(frozen=True, eq=False)
class Tower:
    levels: tuple
    bondings: tuple
    composites: dict = field(repr=False)
    rank_tol: float = RANK_TOL
    coherence_tol: float = COHERENCE_TOL

    @property
    def depth(self):
        return len(self.levels) - 1

    @property
    def dims(self):
        return tuple(lv.dim for lv in self.levels)

    def bond(self, i, j):
        """Composite bonding ``lambda_i^j`` (level ``j`` -> level ``i``), ``j >= i``."""
        self._check_index(i)
        self._check_index(j)
        if j < i:
            raise IndexOutOfRange(f"bond({i}, {j}) needs j >= i")
        return self.composites[(i, j)]

    def project(self, x, i, j):
        """Image under ``lambda_i^j`` of a level-``j`` vector (or batch)."""
        return np.asarray(x, dtype=float) @ self.bond(i, j).T

    def _check_index(self, n):
        if not 0 <= n <= self.depth:
            raise IndexOutOfRange(f"level {n} outside 0..{self.depth}")

    def zero_thread(self):
        return Thread(tuple(np.zeros(d) for d in self.dims))

    def thread_from_top(self, v):
        """Thread generated by a top-level vector (all lower coordinates are projections)."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dims[-1],):
            raise ShapeMismatch(f"top vector must have dim {self.dims[-1]}")
        return Thread(tuple(self.project(v, i, self.depth) for i in range(self.depth + 1)))

    def to_json(self):
        return {
            "levels": [lv.to_json() for lv in self.levels],
            "bondings": [b.map.tolist() for b in self.bondings],
        }


def make_tower(levels, consecutive_bondings, rank_tol=RANK_TOL, coherence_tol=COHERENCE_TOL):
    """Validate levels and consecutive bondings and cache every composite."""
    levels = tuple(levels)
    bondings = tuple(consecutive_bondings)
    if not levels:
        raise ShapeMismatch("a tower needs at least one level")
    if len(bondings) != len(levels) - 1:
        raise ShapeMismatch(f"{len(levels)} levels need {len(levels) - 1} bondings, got {len(bondings)}")
    for n, lv in enumerate(levels):
        if lv.index != n:
            raise ShapeMismatch(f"level at position {n} carries index {lv.index}")
    for i, b in enumerate(bondings):
        if b.to_index != i:
            raise ShapeMismatch(f"bonding {i} targets level {b.to_index}")
        expected = (levels[i].dim, levels[i + 1].dim)
        if b.map.shape != expected:
            raise ShapeMismatch(f"bonding {i + 1}->{i} has shape {b.map.shape}, expected {expected}")
        s = np.linalg.svd(b.map, compute_uv=False)
        smax = s[0] if s.size else 0.0
        smin = s[-1] if s.size == b.map.shape[0] else 0.0
        if smax == 0.0 or smin <= rank_tol * smax:
            raise NotSurjective(i, float(smin))

    composites = {}
    for i, lv in enumerate(levels):
        eye = np.eye(lv.dim)
        eye.setflags(write=False)
        composites[(i, i)] = eye
        acc = eye
        for j in range(i + 1, len(levels)):
            acc = acc @ bondings[j - 1].map
            frozen = acc.copy()
            frozen.setflags(write=False)
            composites[(i, j)] = frozen
    return Tower(levels, bondings, composites, rank_tol, coherence_tol)


def projection_tower(dims, norm_kind="euclidean"):
    """Tower whose bondings drop trailing coordinates."""
    levels = [BanachLevel(n, d, norm_kind) for n, d in enumerate(dims)]
    bonds = []
    for i in range(len(dims) - 1):
        if dims[i + 1] < dims[i]:
            raise ShapeMismatch("projection towers need non-decreasing dims")
        bonds.append(BondingMap(i + 1, i, np.eye(dims[i], dims[i + 1])))
    return make_tower(levels, bonds)


def _as_coords(t, x):
    coords = x.coords if isinstance(x, Thread) else x
    coords = [np.asarray(c, dtype=float) for c in coords]
    if len(coords) != len(t.levels):
        raise ShapeMismatch(f"expected {len(t.levels)} level vectors, got {len(coords)}")
    for n, (c, d) in enumerate(zip(coords, t.dims)):
        if c.shape != (d,):
            raise ShapeMismatch(f"level {n} vector has shape {c.shape}, expected ({d},)")
    return coords


def coherence_defect(t, x):
    """Max over consecutive pairs of the level-``i`` norm of ``lambda_i^{i+1} x_{i+1} - x_i``."""
    coords = _as_coords(t, x)
    worst = 0.0
    for i, b in enumerate(t.bondings):
        d = float(t.levels[i].norm(b.map @ coords[i + 1] - coords[i]))
        worst = max(worst, d)
    return worst


def is_thread(t, x):
    """``(coherent, max_defect)`` for candidate level coordinates ``x``."""
    defect = coherence_defect(t, x)
    return defect <= t.coherence_tol, defect


def make_thread(t, coords):
    ok, defect = is_thread(t, coords)
    if not ok:
        raise ShapeMismatch(f"coordinates are not coherent (defect {defect:.3g})")
    return Thread(tuple(_as_coords(t, coords)))


def seminorm(t, x, n):
    t._check_index(n)
    coords = _as_coords(t, x)
    return float(t.levels[n].norm(coords[n]))


def hat_seminorm(t, x, n):
    """``max_{i<=n}`` of the level seminorms: the increasing graduation."""
    t._check_index(n)
    coords = _as_coords(t, x)
    return max(float(t.levels[i].norm(coords[i])) for i in range(n + 1))


def lift(t, n, v):
    """Thread with level-``n`` coordinate ``v``: projections below, min-norm preimages above."""
    t._check_index(n)
    v = np.asarray(v, dtype=float)
    if v.shape != (t.dims[n],):
        raise ShapeMismatch(f"level {n} vector must have dim {t.dims[n]}")
    coords = [None] * len(t.levels)
    coords[n] = v
    for i in range(n):
        coords[i] = t.bond(i, n) @ v
    for j in range(n + 1, len(t.levels)):
        coords[j] = np.linalg.pinv(t.bondings[j - 1].map) @ coords[j - 1]
    return Thread(tuple(coords))


# -- JSON -------------------------------------------------------------------

def _level_from_json(n, doc, where):
    if not isinstance(doc, dict) or "dim" not in doc:
        raise SchemaError("each level needs a 'dim'", f"{where}[{n}]")
    norm = doc.get("norm", "euclidean")
    try:
        if isinstance(norm, dict):
            if set(norm) != {"weighted"}:
                raise SchemaError("norm object must be {'weighted': [...]}", f"{where}[{n}].norm")
            return BanachLevel(n, int(doc["dim"]), "weighted", tuple(norm["weighted"]))
        return BanachLevel(n, int(doc["dim"]), str(norm))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(str(exc), f"{where}[{n}]") from exc


def tower_from_json(doc, where="$"):
    if not isinstance(doc, dict) or "levels" not in doc:
        raise SchemaError("tower document needs 'levels'", where)
    levels = [_level_from_json(n, lv, f"{where}.levels") for n, lv in enumerate(doc["levels"])]
    raw = doc.get("bondings", [])
    bonds = []
    for i, m in enumerate(raw):
        try:
            arr = np.array(m, dtype=float)
        except (TypeError, ValueError) as exc:
            raise SchemaError("bonding is not a numeric matrix", f"{where}.bondings[{i}]") from exc
        if arr.ndim != 2:
            raise SchemaError("bonding must be a 2-d array", f"{where}.bondings[{i}]")
        bonds.append(BondingMap(i + 1, i, arr))
    try:
        return make_tower(levels, bonds)
    except ShapeMismatch as exc:
        raise SchemaError(str(exc), f"{where}.bondings") from exc


def dumps_tower(t):
    return json.dumps(t.to_json())


def loads_tower(text):
    return tower_from_json(json.loads(text))
