from pathlib import Path

import numpy as np
import pytest

from fvlab.chain import load_chain, random_chain
from fvlab.spectral import build_pi_return, solve_qsd

CHAINS = Path(__file__).resolve().parent.parent / "chains"
FIXTURES = ["chain_a", "chain_b", "chain_c", "chain_d"]


def chain_path(name):
    return CHAINS / f"{name}.json"


@pytest.fixture(scope="session")
def chain_a():
    return load_chain(chain_path("chain_a"))


@pytest.fixture(scope="session")
def chain_b():
    return load_chain(chain_path("chain_b"))


@pytest.fixture(scope="session")
def chain_c():
    return load_chain(chain_path("chain_c"))


@pytest.fixture(scope="session")
def chain_d():
    return load_chain(chain_path("chain_d"))


@pytest.fixture(scope="session", params=FIXTURES)
def fixture_chain(request):
    ch = load_chain(chain_path(request.param))
    spec = solve_qsd(ch)
    return request.param, ch, spec, build_pi_return(ch, spec)


def random_fleet(count=10, kmax=8, seed=2024):
    rng = np.random.default_rng(seed)
    return [random_chain(int(rng.integers(2, kmax + 1)), rng) for _ in range(count)]


def random_centred(pi, rng, count):
    F = rng.standard_normal((count, len(pi)))
    return F - (F @ pi)[:, None]


# one PASS/FAIL line per acceptance criterion, printed after the run
CRITERIA = {}


@pytest.fixture
def criterion():
    def record(number, ok, detail=""):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
