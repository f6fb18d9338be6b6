import sys

import numpy as np
import pytest

from wbcov.channel import ArrayConfig, make_dictionary
from wbcov.rulers import best_ruler, training_matrix


def brute_lags(marks):
    """Set of positive pairwise differences, by double loop."""
    return {b - a for a in marks for b in marks if b > a}


def brute_complete_up_to(marks):
    lags = brute_lags(marks)
    z = 0
    while z + 1 in lags:
        z += 1
    return z


@pytest.fixture
def small_setup():
    """M=32 array with 4 subcarriers, a 10-mark training and a 48-angle grid."""
    cfg = ArrayConfig(M=32, N_c=4)
    ruler = best_ruler(10, cfg.M - 1)
    X = training_matrix(ruler, cfg.M).entries
    dictionary = make_dictionary(48, cfg)
    return cfg, ruler, X, dictionary


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines after the test run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
