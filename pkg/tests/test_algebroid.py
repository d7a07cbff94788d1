import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frechet_flow.algebroid import (
    AlgebroidTower,
    AnchoredLevel,
    algebroid_from_json,
    check_anchor_morphism,
    check_antisymmetry,
    check_jacobi,
    check_leibniz,
    check_psbla,
    check_star_assumptions,
    fd_vector_field_bracket,
    involutivity_defect,
    kernel_dim,
    random_sections,
    vector_field_bracket,
)
from frechet_flow.errors import DomainViolation, KernelDimJump, SchemaError, ShapeMismatch
from frechet_flow.fixtures import REGISTRY, get_fixture
from frechet_flow.poly import Polynomial
from frechet_flow.tower import BanachLevel, projection_tower

ALGEBROIDS = sorted(n for n, e in REGISTRY.items() if e.kind == "algebroid")
SPLIT = sorted(n for n in ALGEBROIDS if REGISTRY[n].expect["split"])


def levi_civita():
    eps = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        eps[k, i, j], eps[k, j, i] = 1.0, -1.0
    return eps


def single_level(anchor, structure=None, radius=1.0):
    base = projection_tower([anchor.shape[0]])
    fiber = projection_tower([anchor.shape[1]])
    lv = AnchoredLevel(base.levels[0], fiber.levels[0], anchor, structure, radius=radius)
    return AlgebroidTower(base, fiber, (lv,))


def constant_anchor(R):
    R = np.asarray(R, dtype=float)
    return Polynomial.constant(R.shape[0], R)


def so3_level(perturb=0.0):
    c = levi_civita()
    # [e0, e1] picks up a component along e0, which breaks the cyclic sum
    c[0, 0, 1] += perturb
    c[0, 1, 0] -= perturb
    return single_level(Polynomial.zero(2, (2, 3)), Polynomial.constant(2, c)).levels[0]


def test_so3_jacobi_and_negative_control(rng):
    lv = so3_level()
    pts = lv.sample(16)
    e = [lv.constant_section(v) for v in np.eye(3)]
    assert check_jacobi(lv, *e, pts) <= 1e-10
    bad = so3_level(1e-2)
    e_bad = [bad.constant_section(v) for v in np.eye(3)]
    assert check_jacobi(bad, *e_bad, pts) >= 1e-3
    a, b = random_sections(lv, 2, rng)
    assert check_jacobi(lv, a, a, b, pts) <= 1e-10
    assert check_jacobi(lv, a, b, b, pts) <= 1e-10


def test_leibniz_examples():
    R = np.array([[1.0, 0.0, 0.5], [0.0, 2.0, 0.0]])
    lv = single_level(constant_anchor(R), Polynomial.constant(2, levi_civita())).levels[0]
    pts = lv.sample(16)
    a1, a2 = lv.constant_section([1.0, 0.0, 0.0]), lv.constant_section([0.0, 1.0, 1.0])
    one = Polynomial.constant(2, 1.0)
    assert check_leibniz(lv, a1, a2, one, pts) <= 1e-10
    linear = Polynomial(2, (), [[1, 0], [0, 1]], [2.0, -1.0])
    assert check_leibniz(lv, a1, a2, linear, pts) <= 1e-8
    zero = Polynomial.zero(2, (3,))
    assert check_leibniz(lv, a1, zero, linear, pts) == 0.0


@pytest.mark.parametrize("name", ALGEBROIDS)
def test_fixture_axioms(name, rng):
    T = get_fixture(name)
    for lv in T.levels:
        if not lv.has_bracket:
            continue
        pts = lv.sample(24)
        a, b, c = random_sections(lv, 3, rng)
        f = Polynomial(lv.base_dim, (), np.vstack([np.zeros(lv.base_dim, int), np.eye(lv.base_dim, dtype=int)]), rng.standard_normal(lv.base_dim + 1))
        assert check_antisymmetry(lv, a, b, pts) <= 1e-10
        assert check_jacobi(lv, a, b, c, pts) <= 1e-10 * max(1.0, lv.radius) ** 3 * 100
        assert check_leibniz(lv, a, b, f, pts) <= 1e-8 * 10
        assert check_anchor_morphism(lv, a, b, pts) <= 1e-6


@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_bracket_is_bilinear_and_antisymmetric(seed, s, t):
    rng = np.random.default_rng(seed)
    lv = get_fixture("heisenberg").levels[1]
    a, b, c = random_sections(lv, 3, rng)
    pts = lv.sample(8, seed % 1000)
    lhs = lv.bracket(s * a + t * c, b)(pts)
    rhs = s * lv.bracket(a, b)(pts) + t * lv.bracket(c, b)(pts)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(rhs)))
    assert check_antisymmetry(lv, a, b, pts) <= 1e-10


def test_exact_vs_fd_vector_field_bracket(rng):
    V = Polynomial(2, (2,), [[0, 0], [1, 0], [0, 2]], rng.standard_normal((3, 2)))
    W = Polynomial(2, (2,), [[0, 0], [1, 1]], rng.standard_normal((2, 2)))
    z = rng.standard_normal((5, 2))
    assert np.allclose(vector_field_bracket(V, W)(z), fd_vector_field_bracket(V, W, z, 1e-5), atol=1e-8)


def test_star_examples():
    incl = single_level(constant_anchor(np.eye(3)[:, :2]))
    rep = check_star_assumptions(incl, C=1.0)
    assert rep.uniform_C == pytest.approx(1.0, abs=1e-15) and rep.passes and rep.kernel_dims == [0]
    zero = single_level(Polynomial.zero(2, (2, 3)))
    rep = check_star_assumptions(zero, C=1.0)
    assert rep.uniform_C == 0.0 and rep.kernel_dims == [3]
    assert all(rep.kernel_complemented) and all(rep.closed_range)
    assert not check_star_assumptions(single_level(constant_anchor(2 * np.eye(2))), C=1.0).passes


def test_kernel_jump_is_reported():
    # rho(z) = [z]: rank drops at the origin
    T = single_level(Polynomial(1, (1, 1), [[1]], [[[1.0]]]))
    pts = [np.array([[0.0], [0.5]])]
    with pytest.raises(KernelDimJump):
        check_star_assumptions(T, points=pts)
    assert kernel_dim(np.zeros((2, 3))) == 3


@pytest.mark.parametrize("name", ["flat-frobenius", "graph-frobenius", "heisenberg", "heisenberg-line", "prolongation"])
def test_psbla_on_split_fixtures(name):
    rep = check_psbla(get_fixture(name), samples=32)
    assert rep.passes(1e-8), rep.as_dict()
    if "frobenius" in name:
        assert rep.anchor_defect <= 1e-9 and rep.bracket_defect <= 1e-9


def test_psbla_negative_controls():
    T = get_fixture("heisenberg")
    lv = T.levels[1]
    broken = AnchoredLevel(lv.base_level, lv.fiber_level, lv.anchor, lv.structure * 1.5, lv.center, lv.radius, lv.fiber_norm)
    rep = check_psbla(T.with_level(1, broken), samples=16)
    assert rep.bracket_defect > 1e-3
    assert check_psbla(get_fixture("cartan"), samples=16).anchor_defect > 1e-3


def test_involutivity():
    assert involutivity_defect(get_fixture("flat-frobenius").levels[-1], get_fixture("flat-frobenius").levels[-1].sample(8))[0] <= 1e-12
    cartan = get_fixture("cartan-j1").levels[0]
    worst, _ = involutivity_defect(cartan, cartan.sample(8))
    assert worst >= 0.5


def test_domain_checks():
    lv = so3_level()
    e = lv.constant_section(np.eye(3)[0])
    with pytest.raises(DomainViolation):
        check_jacobi(lv, e, e, e, np.array([[5.0, 0.0]]))
    with pytest.raises(ShapeMismatch):
        AnchoredLevel(BanachLevel(0, 2), BanachLevel(0, 3), Polynomial.zero(2, (3, 3)))


@pytest.mark.parametrize("name", ALGEBROIDS)
def test_json_round_trip(name):
    T = get_fixture(name)
    back = algebroid_from_json(T.to_json())
    z = T.levels[-1].sample(4)
    assert np.array_equal(back.levels[-1].rho(z), T.levels[-1].rho(z))
    assert back.levels[0].fiber_norm == T.levels[0].fiber_norm


def test_schema_errors():
    with pytest.raises(SchemaError, match="anchor"):
        algebroid_from_json({"levels": [{"dim": 1}], "fiber": {"levels": [{"dim": 1}]}})
    doc = get_fixture("flat-frobenius").to_json()
    doc["anchor"] = doc["anchor"][:1]
    with pytest.raises(SchemaError, match=r"\$\.anchor"):
        algebroid_from_json(doc)
