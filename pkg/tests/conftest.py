import pytest
from hypothesis import HealthCheck, settings

from lhedb import bfv
from lhedb.params import Params, profile
from lhedb.vector import SimBackend

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def tiny():
    return profile("tiny")


@pytest.fixture(scope="session")
def desk_sim():
    return profile("desk-sim")


@pytest.fixture(scope="session")
def micro():
    """p=257 with 16 slots, so a 64-row table spans four chunks."""
    return Params(n=16, p=257, q_bits=420, depth_budget=12, name="micro")


@pytest.fixture
def sim(desk_sim):
    return SimBackend(desk_sim)


@pytest.fixture(scope="session")
def desk_keys():
    params = profile("desk")
    sk, pk, evk = bfv.keygen(params, seed=7)
    return params, sk, pk, evk


@pytest.fixture(scope="session")
def tiny_keys():
    params = profile("tiny")
    sk, pk, evk = bfv.keygen(params, seed=3)
    return params, sk, pk, evk


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"acceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
