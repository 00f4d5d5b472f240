import os
from pathlib import Path

import pytest

MNIST_DIR = Path(os.environ.get("FT_MNIST_DIR", "/root/data/mnist"))


def mnist_available() -> bool:
    return all((MNIST_DIR / f).exists() or (MNIST_DIR / (f + ".gz")).exists() for f in (
        "train-images-idx3-ubyte", "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"))


@pytest.fixture
def mnist_dir():
    if not mnist_available():
        pytest.skip(f"MNIST IDX files not found in {MNIST_DIR} (set FT_MNIST_DIR)")
    return MNIST_DIR


# -- acceptance reporting ----------------------------------------------------
# Tests marked ``criterion(n, text)`` get one PASS/FAIL/SKIP line each in the
# terminal summary, in criterion order.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, text): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = (mark.args[0], mark.args[1])
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        state = "SKIP" if rep.skipped else ("PASS" if rep.passed else "FAIL")
        prev = _CRITERIA.get(key)
        _CRITERIA[key] = "FAIL" if "FAIL" in (state, prev) else (prev if prev == "SKIP" else state)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (n, text), state in sorted(_CRITERIA.items()):
        terminalreporter.write_line(f"[{state}] criterion {n}: {text}")
