"""Executable model structures: unipotent group towers, prolongation towers, jet/Cartan towers.

All anchors are polynomial, so brackets and involutivity defects are exact
coefficient computations.  :data:`REGISTRY` names the shipped fixtures used by
the CLI and the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb

import numpy as np
import scipy.linalg

from .algebroid import AlgebroidTower, AnchoredLevel, distance_to_span
from .errors import DepthTooLarge, NotASubalgebra, ShapeMismatch
from .ode import GradedField, PseudoBall
from .operators import GradedOperator, matrix_exp
from .poly import Polynomial
from .tower import BanachLevel, BondingMap, make_tower, projection_tower

SUBALGEBRA_TOL = 1e-10
MAX_JET_ORDER = 4
MAX_PROLONGATION_DEPTH = 5
GROUP_BASE_SIZE = 3


def _projection_bond(lo, hi):
    return np.eye(lo, hi)


def _tower(dims, bonds, norm_kind="euclidean"):
    levels = [BanachLevel(n, d, norm_kind) for n, d in enumerate(dims)]
    return make_tower(levels, [BondingMap(i + 1, i, b) for i, b in enumerate(bonds)])


# -- unipotent group towers ------------------------------------------------------------

def upper_positions(size):
    """Strictly upper entries ordered column by column, so corner truncation keeps a prefix."""
    return [(p, q) for q in range(1, size) for p in range(q)]


def to_matrix(coords, size):
    """Strictly upper triangular matrix with the given coordinates."""
    coords = np.asarray(coords, dtype=float)
    out = np.zeros(coords.shape[:-1] + (size, size))
    for k, (p, q) in enumerate(upper_positions(size)):
        out[..., p, q] = coords[..., k]
    return out


def to_coords(mat):
    size = mat.shape[-1]
    return np.stack([mat[..., p, q] for p, q in upper_positions(size)], axis=-1)


def group_element(coords, size):
    """``I + N(coords)``: the unipotent matrix with these upper entries."""
    return np.eye(size) + to_matrix(coords, size)


def truncate(mat, size):
    return mat[..., :size, :size]


@dataclass(frozen=True, eq=False)
class GroupTower:
    sizes: tuple
    bases: tuple  # orthonormal coordinate bases of the subalgebras, one per level
    algebroid: AlgebroidTower

    @property
    def depth(self):
        return len(self.sizes) - 1

    def algebra_element(self, n, w):
        """Matrix of the subalgebra element with basis coefficients ``w``."""
        return to_matrix(np.asarray(w) @ self.bases[n].T, self.sizes[n])

    def exp(self, n, w):
        return matrix_exp(self.algebra_element(n, w))

    def homomorphism_defect(self, rng, trials=32):
        """Max ``|trunc(g h) - trunc(g) trunc(h)|`` on random unipotent pairs."""
        worst = 0.0
        for i in range(self.depth):
            s_hi, s_lo = self.sizes[i + 1], self.sizes[i]
            for _ in range(trials):
                g = group_element(rng.standard_normal(s_hi * (s_hi - 1) // 2), s_hi)
                h = group_element(rng.standard_normal(s_hi * (s_hi - 1) // 2), s_hi)
                d = truncate(g @ h, s_lo) - truncate(g, s_lo) @ truncate(h, s_lo)
                worst = max(worst, float(np.max(np.abs(d))))
        return worst

    def exp_coherence_defect(self, rng, trials=32):
        """Max ``|trunc(exp A) - exp(trunc A)|`` for random subalgebra elements at the top."""
        worst = 0.0
        N = self.depth
        for _ in range(trials):
            w = rng.standard_normal(self.bases[N].shape[1])
            A = self.algebra_element(N, w)
            top = matrix_exp(A)
            for i in range(N):
                d = truncate(top, self.sizes[i]) - matrix_exp(truncate(A, self.sizes[i]))
                worst = max(worst, float(np.max(np.abs(d))))
        return worst


def _subalgebra_matrices(spec, size):
    if spec == "full":
        mats = []
        for p, q in upper_positions(size):
            m = np.zeros((size, size))
            m[p, q] = 1.0
            mats.append(m)
        return mats
    mats = []
    for item in spec:
        arr = np.asarray(item, dtype=float)
        if arr.shape == (2,):
            p, q = int(arr[0]), int(arr[1])
            if not 0 <= p < q < size:
                raise ShapeMismatch(f"({p}, {q}) is not a strictly upper position of a {size}x{size} matrix")
            m = np.zeros((size, size))
            m[p, q] = 1.0
        else:
            if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] > size:
                raise ShapeMismatch("subalgebra generators must be square matrices")
            m = np.zeros((size, size))
            m[: arr.shape[0], : arr.shape[1]] = arr
            if np.any(np.tril(m) != 0):
                raise ShapeMismatch("subalgebra generators must be strictly upper triangular")
        mats.append(m)
    return mats


def _basis_from_coords(C):
    """Orthonormal basis of the column span; keeps the columns when they already are orthonormal."""
    keep = C[:, np.linalg.norm(C, axis=0) > SUBALGEBRA_TOL]
    if keep.shape[1] and np.allclose(keep.T @ keep, np.eye(keep.shape[1]), atol=1e-12):
        return keep
    return scipy.linalg.orth(C, rcond=1e-12)


def _closure_defect(basis, size):
    worst = 0.0
    mats = [to_matrix(b, size) for b in basis.T]
    for a in range(len(mats)):
        for b in range(a + 1, len(mats)):
            c = to_coords(mats[a] @ mats[b] - mats[b] @ mats[a])
            worst = max(worst, float(np.linalg.norm(c - basis @ (basis.T @ c))))
    return worst


def _left_invariant_level(n, size, basis, radius):
    d = size * (size - 1) // 2
    h = basis.shape[1]
    mats = [to_matrix(b, size) for b in basis.T]
    const = basis.copy()
    lin = np.zeros((d, d, h))
    for k, (p, q) in enumerate(upper_positions(size)):
        E = np.zeros((size, size))
        E[p, q] = 1.0
        for a, B in enumerate(mats):
            lin[k, :, a] = to_coords(E @ B)
    anchor = Polynomial.affine(d, const, lin)
    c = np.zeros((h, h, h))
    for a in range(h):
        for b in range(h):
            c[:, a, b] = basis.T @ to_coords(mats[a] @ mats[b] - mats[b] @ mats[a])
    structure = Polynomial.constant(d, c)
    return AnchoredLevel(BanachLevel(n, d), BanachLevel(n, h), anchor, structure, None, radius, "induced")


def build_group_tower(depth=2, subalgebra_spec="full", radius=1.0, base_size=GROUP_BASE_SIZE):
    """Unipotent groups of sizes ``base_size .. base_size + depth`` with a left-invariant distribution.

    ``subalgebra_spec`` describes the top subalgebra: ``"full"``, a list of
    strictly upper positions ``(p, q)`` (matrix units), or a list of matrices
    (padded into the top-left corner).  Lower subalgebras are the truncation
    images.  Base coordinates are the strictly upper entries, so the anchor
    ``w -> coords(g B(w))`` with ``g = I + N(z)`` is affine in ``z``.
    """
    sizes = tuple(base_size + i for i in range(depth + 1))
    top = sizes[-1]
    mats = _subalgebra_matrices(subalgebra_spec, top)
    if not mats:
        raise NotASubalgebra("empty subalgebra")
    bases = [None] * (depth + 1)
    bases[-1] = _basis_from_coords(np.stack([to_coords(m) for m in mats], axis=1))
    for i in range(depth - 1, -1, -1):
        d = sizes[i] * (sizes[i] - 1) // 2
        bases[i] = _basis_from_coords(bases[i + 1][:d])
    for i, B in enumerate(bases):
        defect = _closure_defect(B, sizes[i])
        if defect > SUBALGEBRA_TOL:
            raise NotASubalgebra(f"commutators leave the span at level {i} (defect {defect:.3g})")
    base_dims = [s * (s - 1) // 2 for s in sizes]
    base = _tower(base_dims, [_projection_bond(base_dims[i], base_dims[i + 1]) for i in range(depth)])
    fiber_bonds = [bases[i].T @ bases[i + 1][: base_dims[i]] for i in range(depth)]
    fiber = _tower([B.shape[1] for B in bases], fiber_bonds)
    levels = tuple(_left_invariant_level(n, sizes[n], bases[n], radius) for n in range(depth + 1))
    name = f"group-{subalgebra_spec}" if isinstance(subalgebra_spec, str) else "group"
    alg = AlgebroidTower(base, fiber, levels, name, {"sizes": list(sizes)})
    return GroupTower(sizes, tuple(bases), alg)


def heisenberg_subalgebra(top_size):
    """``E01, E12, E02`` plus the first-row units ``E0q``: closed, and all of Heisenberg at size 3."""
    return [(0, 1), (1, 2), (0, 2)] + [(0, q) for q in range(3, top_size)]


# -- jet towers -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JetTower:
    n: int
    m: int
    orders: tuple
    coords: tuple  # per level: list of labels ("x", a) or ("u", alpha, sigma)
    algebroid: AlgebroidTower
    generators: tuple  # per level: list of Polynomial vector fields (columns of the anchor)

    def index(self, level, label):
        return self.coords[level].index(label)


def multi_indices(n, order):
    return [tuple(s) for s in combinations_with_replacement(range(n), order)]


def jet_coordinates(n, m, k):
    labels = [("x", a) for a in range(n)]
    for j in range(k + 1):
        for sigma in multi_indices(n, j):
            for alpha in range(m):
                labels.append(("u", alpha, sigma))
    return labels


def jet_dim(n, m, k):
    return n + m * sum(comb(n + j - 1, j) for j in range(k + 1))


def _total_derivative(n, m, k, labels, a):
    """``D_a = d/dx_a + sum_{|sigma| < k} u_{sigma + a} d/du_sigma`` as an affine vector field."""
    d = len(labels)
    const = np.zeros(d)
    const[labels.index(("x", a))] = 1.0
    lin = np.zeros((d, d))
    for pos, lab in enumerate(labels):
        if lab[0] == "u" and len(lab[2]) < k:
            target = ("u", lab[1], tuple(sorted(lab[2] + (a,))))
            lin[labels.index(target), pos] = 1.0
    return Polynomial.affine(d, const, lin)


def _cartan_generators(n, m, k, labels):
    d = len(labels)
    gens = [_total_derivative(n, m, k, labels, a) for a in range(n)]
    for sigma in multi_indices(n, k):
        for alpha in range(m):
            e = np.zeros(d)
            e[labels.index(("u", alpha, sigma))] = 1.0
            gens.append(Polynomial.constant(d, e))
    return gens


def _stack_columns(fields):
    d = fields[0].nvars
    cols = len(fields)
    out = Polynomial.zero(d, (d, cols))
    for c, f in enumerate(fields):
        sel = np.zeros(cols)
        sel[c] = 1.0
        out = out + f.contract(Polynomial.constant(d, sel), "a,b->ab")
    return out


def build_jet_tower(n=1, m=1, k_max=2, k_min=0, radius=1.0):
    """Jet spaces ``J^k`` of the trivial bundle ``R^n x R^m`` for ``k_min <= k <= k_max`` with Cartan frames.

    The fiber at order ``k`` carries coefficients of the ``n`` total
    derivatives followed by the top-order verticals.  The fiber bonding
    sends ``(w, v)`` to ``(w, S v)``, where ``S`` reads off the
    ``sigma = tau + e_1`` entries of the top slot.  This is the natural
    linear candidate, and it does not make the anchors commute with the
    projections.
    """
    if n < 1 or m < 1:
        raise ShapeMismatch("need n, m >= 1")
    if k_max > MAX_JET_ORDER:
        raise DepthTooLarge(f"jet order {k_max} exceeds {MAX_JET_ORDER}")
    orders = tuple(range(k_min, k_max + 1))
    coords, gens, levels = [], [], []
    for idx, k in enumerate(orders):
        labels = jet_coordinates(n, m, k)
        g = _cartan_generators(n, m, k, labels)
        coords.append(labels)
        gens.append(g)
        anchor = _stack_columns(g)
        levels.append(
            AnchoredLevel(BanachLevel(idx, len(labels)), BanachLevel(idx, len(g)), anchor, None, None, radius, "induced")
        )
    base_dims = [len(c) for c in coords]
    base = _tower(base_dims, [_projection_bond(base_dims[i], base_dims[i + 1]) for i in range(len(orders) - 1)])
    fiber_bonds = []
    for i in range(len(orders) - 1):
        k = orders[i]
        top_lo = [(alpha, s) for s in multi_indices(n, k) for alpha in range(m)]
        top_hi = [(alpha, s) for s in multi_indices(n, k + 1) for alpha in range(m)]
        L = np.zeros((n + len(top_lo), n + len(top_hi)))
        L[:n, :n] = np.eye(n)
        for r, (alpha, tau) in enumerate(top_lo):
            L[n + r, n + top_hi.index((alpha, tuple(sorted(tau + (0,)))))] = 1.0
        fiber_bonds.append(L)
    fiber = _tower([len(g) for g in gens], fiber_bonds)
    alg = AlgebroidTower(base, fiber, tuple(levels), f"cartan-n{n}-m{m}", {"orders": list(orders)})
    return JetTower(n, m, orders, tuple(coords), alg, tuple(gens))


def cartan_bracket_defect(jet, level, points):
    """Max distance of brackets of Cartan generators from the Cartan plane (involutivity defect)."""
    from .algebroid import involutivity_defect

    return involutivity_defect(jet.algebroid.levels[level], points)[0]


def prolonged_tangency_residual(jet, level, points):
    """Residual of ``T pi`` applied to the Cartan generators one order up, against the Cartan plane below.

    ``points`` lie in the higher jet space (level ``level + 1``).
    """
    D = jet.algebroid.base_bond(level, level + 1)
    low = jet.algebroid.levels[level]
    worst = 0.0
    for g in jet.generators[level + 1]:
        vals = g(points) @ D.T
        for z, v in zip(points @ D.T, vals):
            worst = max(worst, distance_to_span(low.rho(z), v))
    return worst


# -- prolongation towers --------------------------------------------------------------------

def default_prolongation_seed():
    """Base R, fiber R^2, anchor ``[3, 0]`` and ``[e1, e2] = e2``: rank one with ``||rho|| = 3``."""
    anchor = Polynomial.constant(1, np.array([[3.0, 0.0]]))
    c = np.zeros((2, 2, 2))
    c[1, 0, 1], c[1, 1, 0] = 1.0, -1.0
    return AnchoredLevel(BanachLevel(0, 1), BanachLevel(0, 2), anchor, Polynomial.constant(1, c))


def _prolong(level, n):
    """Prolongation over the total space: base ``(x, a)``, fiber ``(b, c)``, anchor ``(rho_x b, c)``."""
    b, f = level.base_dim, level.fiber_dim
    nb = b + f
    anchor = level.anchor.embed(nb, range(b)).map_coeffs(
        lambda C: np.block([[C, np.zeros((b, f))], [np.zeros((f, f)), np.zeros((f, f))]])
    )
    anchor = anchor + Polynomial.constant(nb, np.block([[np.zeros((b, f)), np.zeros((b, f))], [np.zeros((f, f)), np.eye(f)]]))
    structure = None
    if level.structure is not None:

        def pad(C):
            out = np.zeros((2 * f, 2 * f, 2 * f))
            out[:f, :f, :f] = C
            return out

        structure = level.structure.embed(nb, range(b)).map_coeffs(pad)
    center = np.concatenate([level.center, np.zeros(f)])
    return AnchoredLevel(
        BanachLevel(n, nb), BanachLevel(n, 2 * f), anchor, structure, center, level.radius, level.fiber_norm
    )


def build_prolongation_tower(seed=None, depth=3):
    """Iterated prolongations of ``seed`` (an :class:`AnchoredLevel`); fiber dims double each step."""
    if depth > MAX_PROLONGATION_DEPTH:
        raise DepthTooLarge(f"prolongation depth {depth} exceeds {MAX_PROLONGATION_DEPTH}")
    seed = seed or default_prolongation_seed()
    levels = [seed]
    for n in range(1, depth + 1):
        levels.append(_prolong(levels[-1], n))
    base_dims = [lv.base_dim for lv in levels]
    fiber_dims = [lv.fiber_dim for lv in levels]
    base = _tower(base_dims, [_projection_bond(base_dims[i], base_dims[i + 1]) for i in range(depth)])
    fiber = _tower(fiber_dims, [_projection_bond(fiber_dims[i], fiber_dims[i + 1]) for i in range(depth)])
    levels = [
        AnchoredLevel(base.levels[n], fiber.levels[n], lv.anchor, lv.structure, lv.center, lv.radius, lv.fiber_norm)
        for n, lv in enumerate(levels)
    ]
    return AlgebroidTower(base, fiber, tuple(levels), "prolongation", {})


def norm_recursion_violations(T, samples=1000, seed=0):
    """Count sampled points with ``||rho_{i+1}|| > max(sup ||rho_i||, 1)`` (plus the sampled sups)."""
    sups = [max(lv.anchor_opnorm(z) for z in lv.sample(samples, seed)) for lv in T.levels]
    violations = 0
    for i in range(1, len(T.levels)):
        bound = max(sups[i - 1], 1.0)
        lv = T.levels[i]
        violations += sum(lv.anchor_opnorm(z) > bound * (1 + 1e-12) for z in lv.sample(samples, seed))
    return violations, sups


# -- Frobenius fixtures -------------------------------------------------------------------------

def build_frobenius_tower(depth=3, curved=False, radius=1.0):
    """Base ``(x_0, y_0, x_1, y_1, ...)`` with the involutive frame ``d/dx_j (+ x_j d/dy_j if curved)``.

    Flat: the tangent-inclusion tower with leaves ``y = const``.  Curved:
    leaves ``y_j = x_j^2 / 2 + const``; the frame commutes, so the bracket is zero.
    """
    levels = []
    for n in range(depth + 1):
        d, f = 2 * (n + 1), n + 1
        const = np.zeros((d, f))
        lin = np.zeros((d, d, f))
        for j in range(f):
            const[2 * j, j] = 1.0
            if curved:
                lin[2 * j, 2 * j + 1, j] = 1.0
        anchor = Polynomial.affine(d, const, lin)
        structure = Polynomial.zero(d, (f, f, f))
        levels.append(AnchoredLevel(BanachLevel(n, d), BanachLevel(n, f), anchor, structure, None, radius, "induced"))
    base = _tower([2 * (n + 1) for n in range(depth + 1)], [_projection_bond(2 * (i + 1), 2 * (i + 2)) for i in range(depth)])
    fiber = _tower([n + 1 for n in range(depth + 1)], [_projection_bond(i + 1, i + 2) for i in range(depth)])
    name = "graph-frobenius" if curved else "flat-frobenius"
    return AlgebroidTower(base, fiber, tuple(levels), name, {})


def build_projection_affine_field(depth=4, seed=7, scale=0.5, radius=4.0):
    """Coherent affine field ``X_n(x) = A_n x + b_n`` on the projection tower of dims ``1..depth+1``.

    Coherence forces ``A_{n+1} = [[A_n, 0], [*, *]]`` and ``b_n`` a prefix of ``b_{n+1}``.
    """
    rng = np.random.default_rng(seed)
    dims = list(range(1, depth + 2))
    t = projection_tower(dims)
    top = np.tril(rng.standard_normal((dims[-1], dims[-1])))
    top *= scale / np.linalg.norm(top, 2)
    b_top = scale * rng.standard_normal(dims[-1]) / np.sqrt(dims[-1])
    A = GradedOperator(t, t, tuple(top[:d, :d] for d in dims))
    b = [b_top[:d] for d in dims]
    domain = PseudoBall(t, t.zero_thread(), radius)
    return GradedField.from_affine(t, A, b, domain)


# -- registry -----------------------------------------------------------------------------------

@dataclass(frozen=True)
class FixtureEntry:
    name: str
    kind: str  # "algebroid" or "field"
    description: str
    build: object = field(repr=False)
    expect: dict = field(default_factory=dict)


def _heisenberg(depth=2):
    top = GROUP_BASE_SIZE + depth
    return build_group_tower(depth, heisenberg_subalgebra(top)).algebroid


def _heisenberg_line(depth=2):
    return build_group_tower(depth, [(0, 1)]).algebroid


REGISTRY = {
    e.name: e
    for e in [
        FixtureEntry(
            "heisenberg",
            "algebroid",
            "unipotent tower (3x3 .. 5x5) with the closed subalgebra <E01, E12, E02, E0q>",
            _heisenberg,
            {"C": 1.0, "involutive": True, "split": True},
        ),
        FixtureEntry(
            "heisenberg-line",
            "algebroid",
            "unipotent tower with the one-parameter subalgebra <E01>",
            _heisenberg_line,
            {"C": 1.0, "involutive": True, "split": True},
        ),
        FixtureEntry(
            "flat-frobenius",
            "algebroid",
            "tangent inclusion of the x-directions in (x, y) space",
            lambda: build_frobenius_tower(3, curved=False),
            {"C": 1.0, "involutive": True, "split": True},
        ),
        FixtureEntry(
            "graph-frobenius",
            "algebroid",
            "commuting frame d/dx_j + x_j d/dy_j with parabolic leaves",
            lambda: build_frobenius_tower(3, curved=True),
            {"C": 1.0, "involutive": True, "split": True},
        ),
        FixtureEntry(
            "prolongation",
            "algebroid",
            "depth-3 prolongation tower of the rank-one seed with ||rho|| = 3",
            lambda: build_prolongation_tower(depth=3),
            {"C": 3.0, "involutive": True, "split": True},
        ),
        FixtureEntry(
            "cartan-j1",
            "algebroid",
            "Cartan distribution on J^1(R, R)",
            lambda: build_jet_tower(1, 1, 1, k_min=1).algebroid,
            {"C": 1.0, "involutive": False, "split": False},
        ),
        FixtureEntry(
            "cartan",
            "algebroid",
            "Cartan distributions on J^0 .. J^2 (R, R); fiber bondings do not intertwine the anchors",
            lambda: build_jet_tower(1, 1, 2).algebroid,
            {"C": 1.0, "involutive": False, "split": False},
        ),
        FixtureEntry(
            "projection-affine",
            "field",
            "coherent affine field on the depth-4 projection tower",
            build_projection_affine_field,
            {},
        ),
    ]
}


def get_fixture(name):
    if name not in REGISTRY:
        raise KeyError(f"unknown fixture {name!r}; known: {', '.join(sorted(REGISTRY))}")
    return REGISTRY[name].build()


def field_to_json(X, x0=None):
    """Affine graded field document: tower schema plus ``field`` and ``domain``."""
    if not X.is_affine:
        raise ValueError("only affine fields serialize")
    doc = X.tower.to_json()
    doc["field"] = {"levels": [{"A": A.tolist(), "b": b.tolist()} for A, b in X.affine]}
    doc["domain"] = {"center": X.domain.center.tolist(), "radius": X.domain.radius, "indices": list(X.domain.indices)}
    if x0 is not None:
        doc["x0"] = x0.tolist()
    return doc


def export(name):
    entry = REGISTRY[name]
    obj = entry.build()
    if entry.kind == "field":
        doc = field_to_json(obj, obj.domain.center)
    else:
        doc = obj.to_json()
    doc["name"] = name
    doc.setdefault("metadata", {})
    doc["metadata"]["expect"] = entry.expect
    return doc
