import math

import numpy as np
import pytest

from zsnr.schedule import build_schedule, make_schedule


@pytest.fixture(scope="session")
def sl():
    return make_schedule("scaled-linear", 1000)


@pytest.fixture(scope="session")
def sl_zero():
    return build_schedule("scaled-linear", 1000, rescaled=True)


@pytest.fixture(scope="session")
def linear():
    return make_schedule("linear", 1000)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sig_round(x: float, digits: int = 6) -> float:
    """Round to ``digits`` significant digits, the way printed tables are."""
    return float(f"{x:.{digits - 1}e}")


def printed_digits(text: str) -> int:
    mantissa = text.lower().split("e")[0].lstrip("-").replace(".", "").lstrip("0")
    return len(mantissa)


def matches_printed(value: float, printed: str, digits: int = 6) -> bool:
    """True when ``value`` is within half a unit of the last compared digit of ``printed``.

    Values printed with fewer than ``digits`` significant digits are
    compared at the precision actually printed.
    """
    ref = float(printed)
    n = min(digits, printed_digits(printed))
    exp = math.floor(math.log10(abs(ref)))
    return abs(value - ref) <= 0.5 * 10.0 ** (exp - n + 1) * (1 + 1e-9)


# acceptance summary: test_acceptance.py appends (number, passed, detail)
ACCEPTANCE: list[tuple[int, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {detail}")
