import numpy as np
import pytest

from spinboson_qfi import CompositeSpace


def max_abs(x) -> float:
    x = x.toarray() if hasattr(x, "toarray") else np.asarray(x)
    return float(np.max(np.abs(x))) if x.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_space():
    return CompositeSpace(3, 4)


_SUMMARY = pytest.StashKey[list]()


def pytest_runtest_makereport(item, call):
    if call.when != "call" or item.get_closest_marker("acceptance") is None:
        return
    label = item.get_closest_marker("acceptance").kwargs.get("label", item.name)
    detail = dict(item.user_properties).get("detail", "")
    verdict = "PASS" if call.excinfo is None else "FAIL"
    item.config.stash.setdefault(_SUMMARY, []).append(f"{label} {verdict}: {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_SUMMARY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

