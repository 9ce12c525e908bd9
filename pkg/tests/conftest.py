"""Shared fixtures: the bundled five-DGU grid and its reference run."""

from __future__ import annotations

import numpy as np
import pytest

from phsgrid import ControllerParams, DguParams, ZipLoad
from phsgrid.network import simulate
from phsgrid.scenario import load_scenario

FILTER = DguParams(r_t=0.2, l_t=1.8e-3, c_t=2.2e-3)

# (V*, Y, Ibar, P) per DGU of the bundled grid
GRID_ROWS = [
    (50.0, 1 / 2, 1.0, 200.0),
    (49.8, 1 / 6, 1.0, 80.0),
    (49.9, 1 / 8, 1.0, 100.0),
    (49.7, 1 / 10, 1.0, 50.0),
    (50.1, 1 / 4, 1.0, 150.0),
]

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def load_for(row) -> ZipLoad:
    _, y, ibar, p = row
    return ZipLoad(y_l=y, i_bar=ibar, p_l=p, v_nominal=50.0)


def controller_for(row, **kw) -> ControllerParams:
    return ControllerParams(r1=1.0, k_i=500.0, v_ref=row[0], **kw)


@pytest.fixture
def dgu1():
    row = GRID_ROWS[0]
    return FILTER, load_for(row), controller_for(row)


@pytest.fixture(scope="session")
def grid_scenario():
    return load_scenario("paper_fig6")


@pytest.fixture(scope="session")
def grid_series(grid_scenario):
    return simulate(grid_scenario)


@pytest.fixture
def record_criterion():
    """Record one acceptance verdict; printed as a block at the end of the run."""

    def _record(label: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
        _ACCEPTANCE[label] = (passed, line)
        print(line)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: (len(s.split()[0]), s)):
        terminalreporter.write_line(_ACCEPTANCE[label][1])


def rng(seed: int = 0) -> np.random.Generator:
    return np.random.default_rng(seed)
