from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from frechet_flow.algebroid import (
    AnchoredLevel,
    algebroid_from_json,
    check_psbla,
    check_star_assumptions,
    involutivity_defect,
    vector_field_bracket,
)
from frechet_flow.errors import DepthTooLarge, NotASubalgebra
from frechet_flow.fixtures import (
    REGISTRY,
    build_group_tower,
    build_jet_tower,
    build_prolongation_tower,
    cartan_bracket_defect,
    export,
    get_fixture,
    jet_coordinates,
    jet_dim,
    norm_recursion_violations,
    prolonged_tangency_residual,
    to_coords,
)
from frechet_flow.leaf import build_chart
from frechet_flow.ode import field_from_json
from frechet_flow.poly import Polynomial
from frechet_flow.tower import BanachLevel


# -- jets -----------------------------------------------------------------------------------

@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 4))
def test_jet_dimension_formula(n, m, k):
    assert jet_dim(n, m, k) == len(jet_coordinates(n, m, k))
    assert jet_dim(n, m, k) == n + m * sum(comb(n + j - 1, j) for j in range(k + 1))


def test_jet_line_examples():
    jet = build_jet_tower(1, 1, 3)
    assert [lv.base_dim for lv in jet.algebroid.levels] == [k + 2 for k in range(4)]
    assert all(lv.fiber_dim == 2 for lv in jet.algebroid.levels)
    # pi_0^1 (x, u, u1) -> (x, u)
    assert np.array_equal(jet.algebroid.base_bond(0, 1) @ np.array([1.0, 2.0, 3.0]), [1.0, 2.0])
    # the C^1 frame: d/dx + u1 d/du and d/du1
    D, V = jet.generators[1]
    z = np.array([0.3, -0.2, 0.7])
    assert np.array_equal(D(z), [1.0, 0.7, 0.0]) and np.array_equal(V(z), [0.0, 0.0, 1.0])
    # [d/du1, d/dx + u1 d/du] = d/du, which escapes the plane
    assert np.array_equal(vector_field_bracket(V, D)(z), [0.0, 1.0, 0.0])


def test_projections_compose():
    T = build_jet_tower(2, 1, 3).algebroid
    for i in range(4):
        for j in range(i, 4):
            for k in range(j, 4):
                assert np.array_equal(T.base_bond(i, j) @ T.base_bond(j, k), T.base_bond(i, k))


@pytest.mark.parametrize("n,m", [(1, 1), (2, 1), (1, 2)])
def test_cartan_generator_counts_and_limit_mechanism(n, m):
    jet = build_jet_tower(n, m, 3, k_min=1)
    for idx, k in enumerate(jet.orders):
        assert len(jet.generators[idx]) == n + m * comb(n + k - 1, k)
        lv = jet.algebroid.levels[idx]
        assert cartan_bracket_defect(jet, idx, lv.sample(8)) > 0.5
    for idx in range(len(jet.orders) - 1):
        pts = jet.algebroid.levels[idx + 1].sample(16)
        assert prolonged_tangency_residual(jet, idx, pts) <= 1e-12


def test_jet_order_limit():
    with pytest.raises(DepthTooLarge):
        build_jet_tower(1, 1, 5)


# -- prolongation ----------------------------------------------------------------------------

def test_prolongation_dims_and_recursion():
    T = build_prolongation_tower(depth=3)
    assert [lv.fiber_dim for lv in T.levels] == [2, 4, 8, 16]
    assert [lv.base_dim for lv in T.levels] == [1, 3, 7, 15]
    violations, sups = norm_recursion_violations(T, samples=1000)
    assert violations == 0 and sups[0] == pytest.approx(3.0) and max(sups) <= 3.0 * (1 + 1e-12)
    rep = check_star_assumptions(T, C=3.0)
    assert rep.passes and rep.uniform_C == pytest.approx(3.0)
    ps = check_psbla(T, samples=16)
    assert ps.anchor_defect <= 1e-9 and ps.bracket_defect <= 1e-9


def test_prolongation_anchor_formula(rng):
    T = build_prolongation_tower(depth=1)
    lv = T.levels[1]
    x, a = rng.standard_normal(1), rng.standard_normal(2)
    b, c = rng.standard_normal(2), rng.standard_normal(2)
    out = lv.rho(np.concatenate([x, a])) @ np.concatenate([b, c])
    seed_rho = T.levels[0].rho(x)
    assert np.allclose(out, np.concatenate([seed_rho @ b, c]))


def test_prolongation_of_zero_anchor():
    seed = AnchoredLevel(BanachLevel(0, 1), BanachLevel(0, 2), Polynomial.zero(1, (1, 2)))
    T = build_prolongation_tower(seed, depth=2)
    z = T.levels[1].sample(4)
    for p in z:
        R = T.levels[1].rho(p)
        assert np.array_equal(R[:, :2], np.zeros((3, 2)))
        assert np.array_equal(R[1:, 2:], np.eye(2))
    assert check_star_assumptions(T).level_norms[1:] == [1.0, 1.0]


def test_prolongation_depth_limit():
    with pytest.raises(DepthTooLarge):
        build_prolongation_tower(depth=6)


# -- groups -----------------------------------------------------------------------------------

def test_group_homomorphisms_and_exp(rng):
    G = build_group_tower(3)
    assert G.homomorphism_defect(rng) <= 1e-12
    assert G.exp_coherence_defect(rng) <= 1e-10


def test_full_subalgebra_leaf_is_open():
    G = build_group_tower(1, "full")
    assert G.sizes == (3, 4)
    chart = build_chart(G.algebroid)
    assert chart.param_dims == (3, 6)


def test_one_parameter_subgroup_leaf():
    G = build_group_tower(1, [(0, 1)])
    chart = build_chart(G.algebroid)
    U = chart.sample_params(8)
    for n, images in enumerate(chart.phi(U)):
        W = chart.level_params(U)[n] @ chart.split.complements[n].T
        want = np.stack([to_coords(expm(G.algebra_element(n, w))) for w in W])
        assert np.max(np.abs(images - want)) <= 1e-7


def test_non_subalgebra_is_rejected():
    with pytest.raises(NotASubalgebra):
        build_group_tower(1, [(0, 1), (1, 2)])


def test_matrix_generators():
    gen = np.eye(3, k=1)  # E01 + E12
    e01 = np.zeros((3, 3))
    e01[0, 1] = 1.0
    with pytest.raises(NotASubalgebra):
        # [E01 + E12, E01] = -E02 leaves the span
        build_group_tower(1, [gen, e01])
    G = build_group_tower(1, [gen, np.eye(3, k=2)])
    assert check_psbla(G.algebroid, samples=8).passes(1e-8)


# -- registry -----------------------------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(n for n, e in REGISTRY.items() if e.kind == "algebroid"))
def test_registry_expectations(name):
    entry = REGISTRY[name]
    T = get_fixture(name)
    rep = check_star_assumptions(T, C=entry.expect["C"])
    assert rep.passes and rep.uniform_C == pytest.approx(entry.expect["C"], abs=1e-12)
    worst = max(involutivity_defect(lv, lv.sample(8))[0] for lv in T.levels)
    assert (worst <= 1e-9) == entry.expect["involutive"]
    doc = export(name)
    assert doc["metadata"]["expect"] == entry.expect
    back = algebroid_from_json(doc)
    assert back.base_tower.dims == T.base_tower.dims


def test_field_fixture_round_trip():
    X = get_fixture("projection-affine")
    back = field_from_json(export("projection-affine"))
    assert all(np.array_equal(a[0], b[0]) for a, b in zip(X.affine, back.affine))
    assert back.tower.dims == (1, 2, 3, 4, 5)


def test_unknown_fixture():
    with pytest.raises(KeyError):
        get_fixture("nope")
