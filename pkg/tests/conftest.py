import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from frechet_flow.tower import BanachLevel, BondingMap, make_tower

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")

ACCEPTANCE_RESULTS = {}


def random_tower(rng, dims, norm_kind="euclidean"):
    """Tower with gaussian (hence full row rank, almost surely) bondings."""
    levels = [BanachLevel(n, d, norm_kind) for n, d in enumerate(dims)]
    bonds = [BondingMap(i + 1, i, rng.standard_normal((dims[i], dims[i + 1]))) for i in range(len(dims) - 1)]
    return make_tower(levels, bonds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        ACCEPTANCE_RESULTS[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'} -- {detail}")
