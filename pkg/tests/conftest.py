import numpy as np
import pytest

from hydrotune.dataset import Dataset


def friedman1(n=500, p=10, noise_sd=1.0, seed=0, name="friedman1"):
    """The classic five-term benchmark surface plus Gaussian noise."""
    assert p >= 5, "the surface uses the first five features"
    rng = np.random.default_rng(seed)
    X = rng.random((n, p))
    y = (
        10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
        + 20.0 * (X[:, 2] - 0.5) ** 2
        + 10.0 * X[:, 3]
        + 5.0 * X[:, 4]
        + rng.normal(0.0, noise_sd, n)
    )
    return Dataset(name, y, X, "y", [f"x{j}" for j in range(p)])


@pytest.fixture
def small_regression():
    return friedman1(n=80, p=5, noise_sd=0.5, seed=3, name="small")


_ACCEPTANCE_RESULTS: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when == "call" and item.get_closest_marker("acceptance"):
        label = item.get_closest_marker("acceptance").args[0]
        _ACCEPTANCE_RESULTS[label] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"{label}: {_ACCEPTANCE_RESULTS[label]}")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion test")
