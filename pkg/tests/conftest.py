import sys
from pathlib import Path

import pytest

from mfgprice.coefficients import derive_pricing_rule, solve_coefficients
from mfgprice.model import fig1_spec

sys.path.insert(0, str(Path(__file__).parent))

# filled by test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def fig1():
    """Solved alpha=0 instance: (spec, coeffs, rule)."""
    spec = fig1_spec(0.0, seed=42)
    coeffs = solve_coefficients(spec)
    return spec, coeffs, derive_pricing_rule(spec, coeffs)


@pytest.fixture(scope="session")
def fig1_run():
    """Full four-alpha preset at seed 42: (result, elapsed seconds)."""
    import time

    from mfgprice.config import fig1_config
    from mfgprice.experiment import run_experiment

    t0 = time.perf_counter()
    result = run_experiment(fig1_config(seed=42))
    return result, time.perf_counter() - t0
