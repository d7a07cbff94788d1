import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_tower
from frechet_flow.errors import IndexOutOfRange, NotSurjective, SchemaError, ShapeMismatch
from frechet_flow.tower import (
    BanachLevel,
    BondingMap,
    Thread,
    coherence_defect,
    dumps_tower,
    hat_seminorm,
    is_thread,
    lift,
    loads_tower,
    make_thread,
    make_tower,
    projection_tower,
    seminorm,
    tower_from_json,
)

dims_strategy = st.lists(st.integers(1, 4), min_size=1, max_size=5).map(lambda ds: list(np.cumsum(ds)))


def test_projection_tower_is_valid():
    t = projection_tower([1, 2, 3])
    assert t.depth == 2
    assert np.array_equal(t.bond(0, 2), np.array([[1.0, 0.0, 0.0]]))


def test_zero_bonding_is_not_surjective():
    levels = [BanachLevel(0, 2), BanachLevel(1, 2)]
    with pytest.raises(NotSurjective) as info:
        make_tower(levels, [BondingMap(1, 0, np.zeros((2, 2)))])
    assert info.value.level == 0


def test_sum_bonding():
    t = make_tower([BanachLevel(0, 1), BanachLevel(1, 2)], [BondingMap(1, 0, [[1.0, 1.0]])])
    assert t.project(np.array([2.0, 5.0]), 0, 1)[0] == 7.0


def test_shape_errors():
    with pytest.raises(ShapeMismatch):
        make_tower([BanachLevel(0, 1), BanachLevel(1, 2)], [])
    with pytest.raises(ShapeMismatch):
        make_tower([BanachLevel(0, 1), BanachLevel(1, 2)], [BondingMap(1, 0, np.eye(2))])
    with pytest.raises(ShapeMismatch):
        BanachLevel(0, 0)
    with pytest.raises(ShapeMismatch):
        BanachLevel(0, 2, "weighted", (1.0,))
    with pytest.raises(ValueError):
        BanachLevel(0, 2, "weighted", (1.0, -1.0))


def test_is_thread_examples():
    t = projection_tower([1, 2, 3])
    good = ([1.0], [1.0, 2.0], [1.0, 2.0, 3.0])
    assert is_thread(t, good) == (True, 0.0)
    ok, defect = is_thread(t, ([5.0], [1.0, 2.0], [1.0, 2.0, 3.0]))
    assert not ok and defect == 4.0
    assert is_thread(t, t.zero_thread()) == (True, 0.0)
    with pytest.raises(ShapeMismatch):
        is_thread(t, ([1.0], [1.0]))


def test_seminorm_example():
    t = projection_tower([1, 2, 3])
    x = make_thread(t, ([1.0], [1.0, 2.0], [1.0, 2.0, 3.0]))
    assert seminorm(t, x, 2) == pytest.approx(math.sqrt(14), abs=1e-15)
    assert hat_seminorm(t, x, 2) == pytest.approx(math.sqrt(14), abs=1e-15)
    assert seminorm(t, x, 1) == pytest.approx(math.sqrt(5), abs=1e-15)
    assert all(seminorm(t, t.zero_thread(), n) == 0.0 for n in range(3))
    with pytest.raises(IndexOutOfRange):
        seminorm(t, x, 3)


def test_norm_kinds():
    x = np.array([3.0, -4.0])
    assert BanachLevel(0, 2).norm(x) == 5.0
    assert BanachLevel(0, 2, "max").norm(x) == 4.0
    assert BanachLevel(0, 2, "weighted", (4.0, 1.0)).norm(x) == pytest.approx(math.sqrt(36 + 16))


def test_lift_examples():
    t = projection_tower([1, 2])
    th = lift(t, 0, np.array([3.0]))
    assert np.array_equal(th[1], [3.0, 0.0])
    top = lift(t, 1, np.array([1.0, 2.0]))
    assert coherence_defect(t, top) == 0.0
    z = lift(t, 0, np.zeros(1))
    assert all(not np.any(c) for c in z.coords)


@given(st.integers(0, 2**31 - 1), dims_strategy)
def test_composites_compose(seed, dims):
    t = random_tower(np.random.default_rng(seed), dims)
    for i in range(len(dims)):
        for j in range(i, len(dims)):
            for k in range(j, len(dims)):
                diff = t.bond(i, j) @ t.bond(j, k) - t.bond(i, k)
                scale = max(1.0, np.linalg.norm(t.bond(i, k)))
                assert np.linalg.norm(diff) <= 1e-12 * scale


@given(st.integers(0, 2**31 - 1), dims_strategy, st.data())
def test_lift_is_thread(seed, dims, data):
    rng = np.random.default_rng(seed)
    t = random_tower(rng, dims)
    n = data.draw(st.integers(0, len(dims) - 1))
    v = rng.standard_normal(dims[n])
    th = lift(t, n, v)
    ok, defect = is_thread(t, th)
    assert ok, defect
    # level n is stored verbatim, and projecting the lift recovers it bit for bit
    assert np.array_equal(th[n], v)
    again = lift(t, n, t.project(th[-1], n, len(dims) - 1))
    assert np.allclose(again[n], v, atol=1e-9)


@given(st.integers(0, 2**31 - 1), dims_strategy)
def test_hat_seminorm_is_running_max(seed, dims):
    rng = np.random.default_rng(seed)
    t = random_tower(rng, dims)
    x = t.thread_from_top(rng.standard_normal(dims[-1]))
    values = [seminorm(t, x, i) for i in range(len(dims))]
    for n in range(len(dims)):
        assert hat_seminorm(t, x, n) == max(values[: n + 1])
        if n:
            assert hat_seminorm(t, x, n) >= hat_seminorm(t, x, n - 1)


def test_project_lift_project_is_bit_exact(rng):
    t = random_tower(rng, [2, 3, 5])
    x = t.thread_from_top(rng.standard_normal(5))
    for n in range(3):
        assert np.array_equal(lift(t, n, x[n])[n], x[n])


def test_json_round_trip_is_bit_exact(rng):
    levels = [BanachLevel(0, 2, "max"), BanachLevel(1, 3, "weighted", (1.0, 2.0, 0.5))]
    t = make_tower(levels, [BondingMap(1, 0, rng.standard_normal((2, 3)))])
    back = loads_tower(dumps_tower(t))
    assert np.array_equal(back.bondings[0].map, t.bondings[0].map)
    assert back.levels == t.levels


def test_schema_errors_name_the_field():
    with pytest.raises(SchemaError, match=r"levels\[0\]"):
        tower_from_json({"levels": [{"norm": "max"}]})
    with pytest.raises(SchemaError):
        tower_from_json({"levels": [{"dim": 1}, {"dim": 2}], "bondings": [[[1.0, "a"]]]})
    with pytest.raises(SchemaError):
        tower_from_json(json.loads('{"bondings": []}'))


def test_threads_are_immutable():
    th = Thread((np.zeros(2),))
    with pytest.raises(ValueError):
        th[0][0] = 1.0
