import os
import sys

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, os.path.dirname(__file__))

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    num_title = getattr(report, "criterion", None)
    if num_title is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        prev = _CRITERIA.get(num_title[0])
        # a criterion passes only when every test tagged with it passes
        if prev is None or prev[1] == "PASS" or status == "FAIL":
            reason = ""
            if status == "SKIP" and isinstance(report.longrepr, tuple):
                reason = report.longrepr[2].removeprefix("Skipped: ")
            _CRITERIA[num_title[0]] = (num_title[1], status, reason)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = tuple(marker.args)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, status, reason = _CRITERIA[num]
        line = f"criterion {num:>2} {status}: {title}"
        if reason:
            line += f" ({reason})"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_binary(rng, n, L, density=0.3, ensure_row=True):
    Y = (rng.random((n, L)) < density).astype(float)
    if ensure_row:
        for i in range(n):
            if not Y[i].any():
                Y[i, rng.integers(L)] = 1.0
    return Y


def topic_dataset(rng, n=60, d=20, L=8, topics=4):
    """Features and labels that share a latent topic per instance."""
    centers = rng.standard_normal((topics, d)) * 3
    topic_labels = [rng.choice(L, size=2, replace=False) for _ in range(topics)]
    X = np.zeros((n, d))
    Y = np.zeros((n, L))
    for i in range(n):
        t = i % topics
        X[i] = centers[t] + rng.standard_normal(d)
        Y[i, topic_labels[t]] = 1.0
        if rng.random() < 0.3:
            Y[i, rng.integers(L)] = 1.0
    X = np.abs(X)
    return sp.csr_matrix(X), sp.csr_matrix(Y)
