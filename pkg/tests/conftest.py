import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

import oracles  # noqa: E402
from typeproj import Alphabet, ConstraintRegion, Pmf  # noqa: E402


@pytest.fixture
def alpha3():
    return Alphabet(oracles.ALPHA3)


@pytest.fixture
def q_ref(alpha3):
    return Pmf(alpha3, oracles.Q_REF)


@pytest.fixture
def mean_region(alpha3):
    """Pi = {E_p[x] >= 1.4} on (0, 1, 2)."""
    return ConstraintRegion.mean(alpha3, lower=oracles.MEAN_LB)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pmf(rng, alphabet, zeros=False):
    w = rng.dirichlet(np.ones(alphabet.m))
    if zeros and alphabet.m > 2:
        w[rng.integers(alphabet.m)] = 0.0
    return Pmf.normalized(alphabet, w)


# --------------------------------------------------------------------------
# acceptance report: one line per criterion in the terminal summary

ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        status, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{status}] criterion {key}: {detail}")
