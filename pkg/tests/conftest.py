import time

import numpy as np
import pytest

from conleyflow.analysis import Settings, lorenz_setup, separator_pipeline
from conleyflow.cubegrid import CubicalGrid
from conleyflow.dynamics import builtin_lorenz, builtin_spiral

ACCEPTANCE: list[tuple[int, str, bool, str]] = []


@pytest.fixture(scope="session")
def record():
    """Log one acceptance criterion; the lines are printed after the run."""

    def add(number: int, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE.append((number, title, bool(passed), detail))
        print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} {detail}")
        return bool(passed)

    return add


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        tr.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {title}" + (f" ({detail})" if detail else ""))


SPIRAL_SETTINGS = Settings(ladder=(2.0, 16.0, 128.0), ladder_scaling="inverse_lambda")


@pytest.fixture(scope="session")
def spiral512():
    """Separator pipeline for the spiral family on [-6,6]^2 at 512^2."""
    grid = CubicalGrid.cube(6.0, 2, 512)
    t0 = time.perf_counter()
    verdict = separator_pipeline(builtin_spiral(), [0.5, 0.25], grid, settings=SPIRAL_SETTINGS)
    return verdict, grid, time.perf_counter() - t0


@pytest.fixture(scope="session")
def lorenz64():
    """Lorenz family r in [20,28] at nine values on a 64^3 grid."""
    flow = builtin_lorenz()
    lams = [float(x) for x in np.linspace(0.0, 1.0, 9)]
    grid, regions = lorenz_setup(flow, lams, 64)
    t0 = time.perf_counter()
    verdict = separator_pipeline(flow, lams, grid, settings=Settings(tau=0.1), regions=regions, threads=4)
    return verdict, grid, time.perf_counter() - t0
