import csv

import numpy as np
import pytest

from tfhazards.grid import TimeGrid
from tfhazards.simulate import PiecewiseHazard


def synthetic_calls(n, seed=0, offered_mean=60.0, patience_scale=1.0):
    """Call-centre-like records: arrival clock time, wait, outcome.

    Patience hazard is u(a) * v(t) on 1-second cells; the offered wait is
    exponential.  A call is abandoned when patience runs out first.
    """
    rng = np.random.default_rng(seed)
    a = rng.uniform(8 * 3600, 20 * 3600, n)
    wait_knots = np.arange(0.0, 301.0)
    v = patience_scale * 0.004 * (1 + np.exp(-wait_knots[1:] / 40.0))
    frac = (a - 8 * 3600) / (12 * 3600)
    u = 1 + 0.4 * np.sin(2 * np.pi * frac)
    base = PiecewiseHazard(TimeGrid(wait_knots), v)
    patience = base.invert(rng.exponential(1.0, n) / u)
    offered = rng.exponential(offered_mean, n)
    wait = np.ceil(np.minimum(patience, offered))
    outcome = np.where(patience < offered, "abandoned", "answered")
    return a.round(), wait, outcome


def write_calls(path, a, wait, outcome):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arrival_s", "wait_s", "outcome"])
        for row in zip(a, wait, outcome):
            w.writerow([f"{row[0]:.0f}", f"{row[1]:.0f}", row[2]])
    return path


@pytest.fixture
def calls_csv(tmp_path):
    return write_calls(tmp_path / "calls.csv", *synthetic_calls(20000, seed=1))


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
