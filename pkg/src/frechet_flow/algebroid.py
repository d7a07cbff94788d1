"""Towers of trivialized anchored bundles and checks of the algebroid axioms.

Each level lives over a ball in its base model.  The anchor is a polynomial
matrix field ``rho(z)`` (base x fiber).  The bracket of two fiber-valued
polynomial sections is the local-chart formula

    [a, b] = Db . rho(a) - Da . rho(b) + c(z)(a, b)

with ``c[k, i, j]`` antisymmetric structure functions.  Leibniz holds for
this formula by construction.  Jacobi and the anchor-morphism property
depend on ``rho`` and ``c`` and are checked.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import sampling
from .errors import DomainViolation, KernelDimJump, SchemaError, ShapeMismatch
from .operators import level_operator_norm
from .poly import Polynomial
from .tower import BanachLevel, Tower, tower_from_json

ANTISYMMETRY_TOL = 1e-10
JACOBI_TOL = 1e-10
LEIBNIZ_TOL = 1e-8
PSBLA_TOL = 1e-8
MORPHISM_TOL = 1e-6
KERNEL_RTOL = 1e-10
BOUND_RTOL = 1e-12  # slack when comparing a computed norm with a user bound
FD_STEP = 1e-5
FIBER_NORMS = ("euclidean", "induced")
DEFAULT_POINTS = 64

_EUCLID_CACHE = {}


def _euclidean(dim):
    if dim not in _EUCLID_CACHE:
        _EUCLID_CACHE[dim] = BanachLevel(0, dim)
    return _EUCLID_CACHE[dim]


@dataclass(frozen=True, eq=False)
class AnchoredLevel:
    """One trivialized anchored bundle ``U x F -> U`` with ``U`` a ball in the base model.

    ``fiber_norm='induced'`` measures a fiber vector ``w`` at ``z`` by
    ``|rho(z) w|``, the Finsler norm a tangent subbundle inherits from the
    ambient space.  It only makes sense for injective anchors.
    """

    base_level: BanachLevel
    fiber_level: BanachLevel
    anchor: Polynomial
    structure: Polynomial = None
    center: np.ndarray = None
    radius: float = 1.0
    fiber_norm: str = "euclidean"

    def __post_init__(self):
        b, f = self.base_level.dim, self.fiber_level.dim
        if self.anchor.nvars != b or self.anchor.shape != (b, f):
            raise ShapeMismatch(f"anchor must be a ({b}, {f}) polynomial in {b} variables")
        if self.structure is not None and (self.structure.nvars != b or self.structure.shape != (f, f, f)):
            raise ShapeMismatch(f"structure functions must have shape ({f}, {f}, {f})")
        center = np.zeros(b) if self.center is None else np.asarray(self.center, dtype=float)
        if center.shape != (b,):
            raise ShapeMismatch("domain center has the wrong dimension")
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        if self.radius <= 0:
            raise ValueError("domain radius must be positive")
        if self.fiber_norm not in FIBER_NORMS:
            raise ValueError(f"unknown fiber norm {self.fiber_norm!r}")

    @property
    def base_dim(self):
        return self.base_level.dim

    @property
    def fiber_dim(self):
        return self.fiber_level.dim

    @property
    def has_bracket(self):
        return self.structure is not None

    def rho(self, z):
        return self.anchor(z)

    def contains(self, z):
        return self.base_level.norm(np.asarray(z) - self.center) < self.radius

    def require_inside(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not np.all(self.contains(points)):
            raise DomainViolation("sample point outside the chart domain")
        return points

    def sample(self, count, seed=sampling.DEFAULT_SEED):
        pts = sampling.ball_points(count, self.base_dim, self.base_level.norm, seed)
        return self.center + self.radius * pts

    def anchor_field(self, a):
        """The base vector field ``rho(a)`` of a section ``a``."""
        return self.anchor.contract(a, "bf,f->b")

    def bracket(self, a, b):
        if self.structure is None:
            raise ValueError("this anchored level carries no bracket")
        out = a_dot(b.jacobian(), self.anchor_field(a)) - a_dot(a.jacobian(), self.anchor_field(b))
        return out + self.structure.contract(a, "kij,i->kj").contract(b, "kj,j->k")

    def anchor_opnorm(self, z):
        """``||rho(z)||^op`` from the fiber norm to the base level norm."""
        R = np.asarray(self.rho(z))
        if self.fiber_norm == "euclidean":
            return level_operator_norm(R, self.fiber_level, self.base_level)
        w, V = np.linalg.eigh(R.T @ R)
        if w.min() <= KERNEL_RTOL * max(w.max(), 1.0):
            raise ValueError("induced fiber norm needs an injective anchor")
        inv_sqrt = (V / np.sqrt(w)) @ V.T
        return level_operator_norm(R @ inv_sqrt, _euclidean(self.fiber_dim), self.base_level)

    def constant_section(self, w):
        return Polynomial.constant(self.base_dim, np.asarray(w, dtype=float))

    def to_json(self):
        return {
            "anchor": self.anchor.to_json(),
            "bracket": None if self.structure is None else self.structure.to_json(),
            "domain": {"center": self.center.tolist(), "radius": self.radius},
        }


def a_dot(J, V):
    """``J . V`` for a matrix polynomial ``J`` (shape ``(k, j)``) and a vector polynomial ``V``."""
    return J.contract(V, "kj,j->k")


def vector_field_bracket(V, W):
    """Exact Lie bracket ``DW . V - DV . W`` of polynomial vector fields."""
    return a_dot(W.jacobian(), V) - a_dot(V.jacobian(), W)


def fd_vector_field_bracket(V, W, z, h):
    """Central-difference Lie bracket of callable vector fields at the points ``z``."""
    z = np.atleast_2d(z)
    d = z.shape[1]
    vz, wz = V(z), W(z)
    out = np.zeros_like(vz, dtype=float)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        dW = (W(z + e) - W(z - e)) / (2 * h)
        dV = (V(z + e) - V(z - e)) / (2 * h)
        out += dW * vz[:, j : j + 1] - dV * wz[:, j : j + 1]
    return out


@dataclass(frozen=True, eq=False)
class AlgebroidTower:
    """Levels of anchored bundles linked by linear base bondings ``delta`` and fiber bondings ``ell``."""

    base_tower: Tower
    fiber_tower: Tower
    levels: tuple
    name: str = ""
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.levels) != len(self.base_tower.levels) or len(self.levels) != len(self.fiber_tower.levels):
            raise ShapeMismatch("need one anchored level per base and fiber level")
        for n, lv in enumerate(self.levels):
            if lv.base_dim != self.base_tower.dims[n] or lv.fiber_dim != self.fiber_tower.dims[n]:
                raise ShapeMismatch(f"level {n} dimensions disagree with the towers")

    @property
    def depth(self):
        return len(self.levels) - 1

    def base_bond(self, i, j):
        return self.base_tower.bond(i, j)

    def fiber_bond(self, i, j):
        return self.fiber_tower.bond(i, j)

    def base_point(self):
        """Domain centers as a list of level vectors."""
        return [lv.center for lv in self.levels]

    def with_level(self, n, level):
        levels = list(self.levels)
        levels[n] = level
        return AlgebroidTower(self.base_tower, self.fiber_tower, tuple(levels), self.name, dict(self.metadata))

    def to_json(self):
        doc = self.base_tower.to_json()
        doc["fiber"] = self.fiber_tower.to_json()
        doc["anchor"] = [lv.anchor.to_json() for lv in self.levels]
        doc["bracket"] = [None if lv.structure is None else lv.structure.to_json() for lv in self.levels]
        doc["domain"] = [{"center": lv.center.tolist(), "radius": lv.radius} for lv in self.levels]
        doc["fiber_norm"] = self.levels[0].fiber_norm
        if self.name:
            doc["name"] = self.name
        if self.metadata:
            doc["metadata"] = self.metadata
        return doc


def algebroid_from_json(doc, where="$"):
    if not isinstance(doc, dict):
        raise SchemaError("algebroid document must be an object", where)
    for key in ("levels", "fiber", "anchor"):
        if key not in doc:
            raise SchemaError(f"missing key '{key}'", where)
    base = tower_from_json(doc, where)
    fiber = tower_from_json(doc["fiber"], f"{where}.fiber")
    n_levels = len(base.levels)
    anchors = doc["anchor"]
    brackets = doc.get("bracket") or [None] * n_levels
    domains = doc.get("domain") or [{}] * n_levels
    fiber_norm = doc.get("fiber_norm", "euclidean")
    if fiber_norm not in FIBER_NORMS:
        raise SchemaError(f"fiber_norm must be one of {FIBER_NORMS}", f"{where}.fiber_norm")
    for key, seq in (("anchor", anchors), ("bracket", brackets), ("domain", domains)):
        if not isinstance(seq, list) or len(seq) != n_levels:
            raise SchemaError(f"need a list with one entry per level ({n_levels})", f"{where}.{key}")
    levels = []
    for n in range(n_levels):
        try:
            anchor = Polynomial.from_json(anchors[n])
            structure = None if brackets[n] is None else Polynomial.from_json(brackets[n])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad polynomial: {exc}", f"{where}.anchor[{n}]") from exc
        dom = domains[n] or {}
        try:
            levels.append(
                AnchoredLevel(
                    base.levels[n],
                    fiber.levels[n],
                    anchor,
                    structure,
                    dom.get("center"),
                    float(dom.get("radius", 1.0)),
                    fiber_norm,
                )
            )
        except (ShapeMismatch, ValueError) as exc:
            raise SchemaError(str(exc), f"{where}.level[{n}]") from exc
    try:
        return AlgebroidTower(base, fiber, tuple(levels), doc.get("name", ""), doc.get("metadata", {}))
    except ShapeMismatch as exc:
        raise SchemaError(str(exc), where) from exc


# -- axiom checks ---------------------------------------------------------------

def _max_norm(v):
    v = np.asarray(v)
    return float(np.max(np.linalg.norm(v.reshape(v.shape[0], -1), axis=-1), initial=0.0))


def check_antisymmetry(level, a, b, points):
    points = level.require_inside(points)
    return _max_norm(level.bracket(a, b)(points) + level.bracket(b, a)(points))


def check_leibniz(level, a1, a2, f, points, step=FD_STEP):
    """Max over points of ``|[a1, f a2] - f [a1, a2] - df(rho(a1)) a2|``.

    ``f`` is a scalar polynomial; its derivative along ``rho(a1)`` is taken by
    central differences with step ``step * radius``.
    """
    points = level.require_inside(points)
    h = step * level.radius
    lhs = level.bracket(a1, f * a2)(points)
    direction = level.anchor_field(a1)(points)
    df = (f(points + h * direction) - f(points - h * direction)) / (2 * h)
    rhs = f(points)[:, None] * level.bracket(a1, a2)(points) + df[:, None] * a2(points)
    return _max_norm(lhs - rhs)


def check_jacobi(level, a1, a2, a3, points):
    points = level.require_inside(points)
    br = level.bracket
    cyc = br(a1, br(a2, a3)) + br(a2, br(a3, a1)) + br(a3, br(a1, a2))
    return _max_norm(cyc(points))


def check_anchor_morphism(level, a, b, points, step=FD_STEP):
    """``rho([a, b]) - [rho(a), rho(b)]`` with the base bracket taken by finite differences."""
    points = level.require_inside(points)
    lhs = level.anchor_field(level.bracket(a, b))(points)
    rhs = fd_vector_field_bracket(level.anchor_field(a), level.anchor_field(b), points, step * level.radius)
    return _max_norm(lhs - rhs)


def random_sections(level, count, rng, degree=2, scale=1.0):
    """Polynomial fiber-valued sections of degree ``<= 2`` centered on the chart domain."""
    from itertools import combinations_with_replacement

    b, f = level.base_dim, level.fiber_dim
    exps = [np.zeros(b, dtype=int)]
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(b), d):
            e = np.zeros(b, dtype=int)
            for k in combo:
                e[k] += 1
            exps.append(e)
    shift = np.eye(b)
    out = []
    for _ in range(count):
        coeffs = scale * rng.standard_normal((len(exps), f))
        coeffs[1:] /= max(level.radius, 1.0)
        p = Polynomial(b, (f,), exps, coeffs)
        # re-center at the domain center: p(z - center)
        out.append(_translate(p, -level.center, shift))
    return out


def _translate(p, offset, eye):
    """``z -> p(z + offset)``."""
    if not np.any(offset):
        return p
    nv = p.nvars
    lin = [Polynomial(nv, (), np.vstack([np.zeros(nv), eye[k]]), [offset[k], 1.0]) for k in range(nv)]
    total = Polynomial.zero(nv, p.shape)
    for e, c in zip(p.exps, p.coeffs):
        mono = Polynomial.constant(nv, 1.0)
        for k, power in enumerate(e):
            for _ in range(int(power)):
                mono = mono * lin[k]
        total = total + mono * Polynomial.constant(nv, c)
    return total


# -- uniform anchor bound and kernel ranks -----------------------------------------

def kernel_dim(R, rtol=KERNEL_RTOL):
    R = np.asarray(R, dtype=float)
    s = np.linalg.svd(R, compute_uv=False)
    smax = s[0] if s.size else 0.0
    rank = int(np.sum(s > rtol * max(smax, 1.0)))
    return R.shape[1] - rank


@dataclass
class StarReport:
    kernel_complemented: list
    closed_range: list
    kernel_dims: list
    level_norms: list
    uniform_C: float
    C: float
    passes: bool

    def as_dict(self):
        return {
            "kernel_complemented": self.kernel_complemented,
            "closed_range": self.closed_range,
            "kernel_dims": self.kernel_dims,
            "level_norms": self.level_norms,
            "uniform_C": self.uniform_C,
            "C": self.C,
            "passes": self.passes,
        }


def check_star_assumptions(T, C=None, samples=DEFAULT_POINTS, seed=sampling.DEFAULT_SEED, points=None):
    """Uniform anchor bound and kernel-dimension constancy over sampled chart points.

    ``points`` optionally gives explicit per-level sample arrays.  With
    ``C=None`` the check passes whenever the sampled sup is finite.
    """
    kernel_dims, level_norms = [], []
    for n, lv in enumerate(T.levels):
        pts = lv.require_inside(points[n]) if points is not None else lv.sample(samples, seed)
        dims = {kernel_dim(lv.rho(z)) for z in pts}
        if len(dims) > 1:
            raise KernelDimJump(f"level {n}: kernel dimension varies over the domain {sorted(dims)}")
        kernel_dims.append(dims.pop())
        level_norms.append(max(lv.anchor_opnorm(z) for z in pts))
    uniform_C = max(level_norms)
    passes = bool(np.isfinite(uniform_C)) if C is None else bool(uniform_C <= C * (1 + BOUND_RTOL))
    n_levels = len(T.levels)
    return StarReport([True] * n_levels, [True] * n_levels, kernel_dims, level_norms, uniform_C, C, passes)


# -- projective compatibility -----------------------------------------------------

def lift_section(T, a, i, j):
    """Projectable section at level ``j`` over ``a`` at level ``i``: ``z -> ell^+ a(delta z)``."""
    D = T.base_bond(i, j)
    Lp = np.linalg.pinv(T.fiber_bond(i, j))
    return a.compose_linear(D).map_coeffs(lambda c: Lp @ c)


@dataclass
class PsblaReport:
    anchor_defect: float
    bracket_defect: float
    per_pair: dict

    def passes(self, tol=PSBLA_TOL):
        return self.anchor_defect <= tol and self.bracket_defect <= tol

    def as_dict(self):
        return {
            "anchor_defect": self.anchor_defect,
            "bracket_defect": self.bracket_defect,
            "per_pair": {f"{i}-{j}": v for (i, j), v in sorted(self.per_pair.items())},
        }


def check_psbla(T, samples=DEFAULT_POINTS, n_sections=3, seed=sampling.DEFAULT_SEED):
    """Defects of ``rho_i o ell = T delta o rho_j`` and of ``ell [a, b]_j = [ell a, ell b]_i``.

    Brackets are compared on projectable sections lifted from random level-``i``
    sections.  Pairs without brackets only contribute the anchor square.
    """
    rng = np.random.default_rng(seed)
    anchor_worst, bracket_worst = 0.0, 0.0
    per_pair = {}
    for j in range(1, len(T.levels)):
        lj = T.levels[j]
        pts = lj.sample(samples, seed)
        for i in range(j):
            li = T.levels[i]
            D, L = T.base_bond(i, j), T.fiber_bond(i, j)
            low = pts @ D.T
            a_def = max(
                float(np.linalg.norm(li.rho(zl) @ L - D @ lj.rho(z), 2)) for z, zl in zip(pts, low)
            )
            b_def = 0.0
            if li.has_bracket and lj.has_bracket:
                secs = random_sections(li, n_sections, rng)
                lifted = [lift_section(T, s, i, j) for s in secs]
                for p in range(len(secs)):
                    for q in range(p + 1, len(secs)):
                        top = lj.bracket(lifted[p], lifted[q])(pts) @ L.T
                        bottom = li.bracket(secs[p], secs[q])(low)
                        b_def = max(b_def, _max_norm(top - bottom))
            per_pair[(i, j)] = {"anchor": a_def, "bracket": b_def}
            anchor_worst = max(anchor_worst, a_def)
            bracket_worst = max(bracket_worst, b_def)
    return PsblaReport(anchor_worst, bracket_worst, per_pair)


# -- involutivity ------------------------------------------------------------------

def distance_to_span(R, v, rtol=KERNEL_RTOL):
    """Euclidean residual of ``v`` after orthogonal projection onto the column space of ``R``."""
    U, s, _ = np.linalg.svd(np.asarray(R, dtype=float), full_matrices=False)
    r = int(np.sum(s > rtol * max(s[0] if s.size else 0.0, 1.0)))
    U = U[:, :r]
    return float(np.linalg.norm(v - U @ (U.T @ v)))


def involutivity_defect(level, points):
    """Max distance of ``[rho e_a, rho e_b](z)`` from ``rho(z)(F)`` over frame pairs and points."""
    points = level.require_inside(points)
    frame = [level.anchor.contract(Polynomial.constant(level.base_dim, e), "bf,f->b") for e in np.eye(level.fiber_dim)]
    worst = 0.0
    pairs = {}
    for a in range(len(frame)):
        for b in range(a + 1, len(frame)):
            vals = vector_field_bracket(frame[a], frame[b])(points)
            d = max(distance_to_span(level.rho(z), v) for z, v in zip(points, vals))
            pairs[(a, b)] = d
            worst = max(worst, d)
    return worst, pairs
