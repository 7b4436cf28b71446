"""Shared fixtures and the acceptance summary printed at the end of a run."""

from __future__ import annotations

import numpy as np
import pytest

from cohortparity.data import Dataset, Example, SyntheticConfig, generate_synthetic

_ACCEPTANCE: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        _ACCEPTANCE[number] = (title, status, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status, seconds = _ACCEPTANCE[number]
        terminalreporter.write_line(f"[{status}] criterion {number}: {title} ({seconds:.1f}s)")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tiny_dataset() -> Dataset:
    rows = [
        ("great food", 1, "u1", {"gender": "F", "score": 0.2}),
        ("bad service", 0, "u2", {"gender": "M", "score": 0.9}),
        ("great great place", 1, "u1", {"gender": "F", "score": 0.4}),
        ("awful", 0, "u3", {"score": 0.7}),
        ("fine food", 1, "u2", {"gender": "M", "score": 0.5}),
        ("bad bad", 0, "u3", {"gender": "F", "score": 0.1}),
    ]
    examples = tuple(Example(tuple(t.split()), y, u, a) for t, y, u, a in rows)
    return Dataset(examples, 2, {"gender": "categorical", "score": "real"})


@pytest.fixture(scope="session")
def small_synthetic() -> Dataset:
    cfg = SyntheticConfig(num_groups=2, users_per_group=4, examples_per_user=20,
                          group_label_noise=(0.05, 0.3), seed=3)
    return generate_synthetic(cfg)
