import math
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import brentq

DATA_DIR = Path(__file__).resolve().parents[1] / "src" / "optdesign" / "data"
PLUM_CSV = DATA_DIR / "plum.csv"

# Filled by test_acceptance.py; printed after the run so the per-criterion
# verdicts land in the captured log.
ACCEPTANCE_LINES = []


def stationary_design(v):
    """Independent oracle for the interior optimum.

    At an interior stationary point every coordinate satisfies
    ``p_i (1 - 3 p_i) = c v_i`` for one constant ``c``, so
    ``p_i = (1 +/- sqrt(1 - 12 c v_i)) / 6``. At most the largest variance
    can take the minus root. Scan both sign patterns for ``sum(p) = 1``
    and keep the root with the largest criterion.
    """
    v = np.asarray(v, dtype=float)
    m = int(np.argmax(v))
    c_hi = 1.0 / (12.0 * v.max())

    def design(c, minus):
        s = np.sqrt(np.maximum(0.0, 1.0 - 12.0 * c * v))
        p = (1.0 + s) / 6.0
        if minus:
            p[m] = (1.0 - s[m]) / 6.0
        return p

    best, best_L = None, -1.0
    for minus in (False, True):
        grid = np.linspace(c_hi * 1e-9, c_hi, 4001)
        vals = [design(c, minus).sum() - 1.0 for c in grid]
        for k in range(len(grid) - 1):
            if vals[k] == 0.0 or vals[k] * vals[k + 1] < 0.0:
                c = brentq(lambda x: design(x, minus).sum() - 1.0, grid[k], grid[k + 1],
                           xtol=1e-300, rtol=1e-15, maxiter=500)
                p = design(c, minus)
                L = (v[3] * p[0] * p[1] * p[2] + v[2] * p[0] * p[1] * p[3]
                     + v[1] * p[0] * p[2] * p[3] + v[0] * p[1] * p[2] * p[3])
                if np.all(p > 0) and L > best_L:
                    best, best_L = p, L
    return best


def random_variances(rng, low=0.5, high=20.0, saturated=None):
    """Log-uniform variances, optionally conditioned on (non-)saturation."""
    while True:
        v = np.exp(rng.uniform(math.log(low), math.log(high), 4))
        if saturated is None or (2.0 * v.max() >= v.sum()) == saturated:
            return v


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def plum_csv():
    return PLUM_CSV


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
