import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_tower
from frechet_flow.errors import NotCoherent, NotInjective, ShapeMismatch
from frechet_flow.operators import (
    GradedOperator,
    check_coherence,
    compose,
    exp_tower,
    identity,
    injectivity_profile,
    inverse,
    is_injective,
    is_uniformly_bounded,
    level_operator_norm,
    norm_inf,
    openness_margin,
    operator_from_json,
    operator_seminorms,
    random_coherent_operator,
    require_openness_margin,
)
from frechet_flow.tower import BanachLevel, projection_tower


@pytest.fixture
def proj12():
    return projection_tower([1, 2])


def test_identity_coherent_and_unit_norm():
    t = projection_tower([1, 2, 3])
    I = identity(t)
    assert check_coherence(I) == (True, 0.0)
    norms = operator_seminorms(I)
    assert norms.p == (1.0, 1.0, 1.0) and norms.norm_inf == 1.0
    assert is_uniformly_bounded(I, 1.0)
    assert openness_margin(I) == 0.5


def test_scalar_operator(proj12):
    L = GradedOperator(proj12, proj12, ([[2.0]], 2 * np.eye(2)))
    assert check_coherence(L)[0]
    assert norm_inf(-1.5 * identity(proj12)) == 1.5


def test_rotation_is_incoherent(proj12):
    L = GradedOperator(proj12, proj12, ([[1.0]], [[0.0, -1.0], [1.0, 0.0]]))
    assert not check_coherence(L)[0]
    with pytest.raises(NotCoherent):
        operator_seminorms(L)
    with pytest.raises(NotCoherent):
        exp_tower(L)


def test_diagonal_seminorms(proj12):
    L = GradedOperator(proj12, proj12, ([[1.0]], np.diag([1.0, 3.0])))
    norms = operator_seminorms(L)
    assert norms.p == (1.0, 3.0) and norms.norm_inf == 3.0
    assert not is_uniformly_bounded(L, 2.0)
    assert is_uniformly_bounded(L, norms.norm_inf)


def test_injectivity_examples(proj12):
    L = GradedOperator(proj12, proj12, ([[1.0]], np.diag([1.0, 0.0])))
    prof = injectivity_profile(L)
    assert prof[0].injective and not prof[1].injective
    assert not is_injective(L) and openness_margin(L) is None
    with pytest.raises(NotInjective):
        require_openness_margin(L)
    small = GradedOperator(proj12, proj12, ([[1.0]], np.diag([1.0, 1e-3])))
    assert injectivity_profile(small)[1].smallest_singular_value == pytest.approx(1e-3, rel=1e-12)
    assert all(r.closed_range for r in injectivity_profile(small))
    assert openness_margin(small) == pytest.approx(5e-4, rel=1e-12)


def test_exp_examples(proj12):
    Z = 0.0 * identity(proj12)
    assert all(np.array_equal(a, np.eye(a.shape[0])) for a in exp_tower(Z).levels)
    t = projection_tower([2, 3])
    N = np.zeros((3, 3))
    N[0, 1] = 2.0
    N[2, 0] = -1.0
    A = GradedOperator(t, t, (N[:2, :2], N))
    assert np.array_equal(N @ N @ N, np.zeros((3, 3)))
    E = exp_tower(A)
    assert np.array_equal(E.levels[1], np.eye(3) + N + N @ N / 2)
    nil2 = GradedOperator(t, t, (np.zeros((2, 2)), np.diag([0.0, 0.0, 0.0]) + np.eye(3, k=1) * [1, 0, 0]))
    assert np.array_equal(exp_tower(nil2).levels[1], np.eye(3) + nil2.levels[1])
    D = GradedOperator(proj12, proj12, ([[0.3]], np.diag([0.3, -2.0])))
    assert np.allclose(exp_tower(D).levels[1], np.diag(np.exp([0.3, -2.0])), rtol=1e-12)


def test_shape_checks(proj12):
    with pytest.raises(ShapeMismatch):
        GradedOperator(proj12, proj12, ([[1.0]],))
    with pytest.raises(ShapeMismatch):
        GradedOperator(proj12, proj12, ([[1.0]], np.eye(3)))
    with pytest.raises(ShapeMismatch):
        compose(identity(proj12), identity(projection_tower([1, 3])))


def test_json_round_trip(rng):
    t = random_tower(rng, [2, 3])
    L = random_coherent_operator(t, t, rng)
    back = operator_from_json(L.to_json(), t)
    assert all(np.array_equal(a, b) for a, b in zip(back.levels, L.levels))


@given(st.integers(0, 2**31 - 1))
def test_random_operators_are_coherent(seed):
    rng = np.random.default_rng(seed)
    src = random_tower(rng, [1, 3, 4])
    tgt = random_tower(rng, [2, 2, 5])
    L = random_coherent_operator(src, tgt, rng)
    assert check_coherence(L)[0]


@given(st.integers(0, 2**31 - 1))
def test_exp_preserves_coherence(seed):
    rng = np.random.default_rng(seed)
    t = random_tower(rng, [2, 3, 5])
    A = random_coherent_operator(t, t, rng)
    A = (5.0 * rng.uniform() / norm_inf(A)) * A
    E = exp_tower(A)
    ok, defect = check_coherence(E)
    assert ok, defect
    assert all(abs(np.linalg.det(e)) > 0 for e in E.levels)
    back = compose(E, exp_tower(-1.0 * A))
    assert all(np.allclose(m, np.eye(m.shape[0]), atol=1e-8) for m in back.levels)
    assert all(np.allclose(a, b, atol=1e-8) for a, b in zip(inverse(E).levels, exp_tower(-1.0 * A).levels))


@given(st.integers(0, 2**31 - 1))
def test_submultiplicative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_tower(rng, d) for d in ([1, 2, 4], [2, 3, 3], [1, 2, 5]))
    M = random_coherent_operator(a, b, rng)
    L = random_coherent_operator(b, c, rng)
    assert norm_inf(compose(L, M)) <= norm_inf(L) * norm_inf(M) * (1 + 1e-12)


@given(st.integers(0, 2**31 - 1), st.sampled_from(["euclidean", "max", "weighted"]), st.sampled_from(["euclidean", "max", "weighted"]))
def test_level_norm_dominates_brute_force(seed, src_kind, tgt_kind):
    rng = np.random.default_rng(seed)
    def level(kind, d):
        return BanachLevel(0, d, kind, tuple(rng.uniform(0.5, 2.0, d)) if kind == "weighted" else None)
    src, tgt = level(src_kind, 3), level(tgt_kind, 2)
    A = rng.standard_normal((2, 3))
    x = rng.uniform(-1.0, 1.0, (10_000, 3))  # reaches max-norm vertices as well as round spheres
    ratios = np.array([tgt.norm(A @ v) / src.norm(v) for v in x])
    exact = level_operator_norm(A, src, tgt)
    assert ratios.max() <= exact * (1 + 1e-12)
    if src_kind == "max":
        # the sup over a cube sits at a vertex; enumerate all 2^3 of them
        signs = 1.0 - 2.0 * ((np.arange(8)[:, None] >> np.arange(3)) & 1)
        assert max(tgt.norm(A @ v) for v in signs) == pytest.approx(exact, rel=1e-12)
    else:
        # random directions come within 1% of the true sup on these small levels
        assert ratios.max() >= 0.99 * exact


def test_seminorms_are_running_max_of_level_norms(rng):
    t = random_tower(rng, [2, 3, 4])
    L = random_coherent_operator(t, t, rng)
    norms = operator_seminorms(L)
    levels = [np.linalg.norm(a, 2) for a in L.levels]
    assert np.allclose(norms.p, np.maximum.accumulate(levels), rtol=1e-12)
    assert all(x <= y for x, y in zip(norms.p, norms.p[1:]))


@given(st.integers(0, 2**31 - 1))
def test_openness_margin_keeps_injectivity(seed):
    rng = np.random.default_rng(seed)
    src = random_tower(rng, [1, 2, 3])
    tgt = random_tower(rng, [2, 3, 5])
    L = random_coherent_operator(src, tgt, rng)
    m = openness_margin(L)
    assert m is not None and m > 0
    P = random_coherent_operator(src, tgt, rng)
    P = (0.999 * m * rng.uniform() / norm_inf(P)) * P
    assert is_injective(L + P)
