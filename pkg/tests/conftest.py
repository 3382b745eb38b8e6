import numpy as np
import pytest

from crowdconsensus.core import make_view

ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    ACCEPTANCE_LINES.append(f"[{status}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


def random_view(rng, max_tasks=4, max_workers=3, max_classes=3, min_classes=2, allow_unannotated=True):
    """Small random view: each (task, worker) pair annotates with prob 0.6."""
    t = int(rng.integers(1, max_tasks + 1))
    W = int(rng.integers(1, max_workers + 1))
    K = int(rng.integers(min_classes, max_classes + 1))
    triples = []
    for i in range(t):
        for w in range(W):
            if rng.random() < 0.6:
                triples.append((i, w, int(rng.integers(K))))
    if not triples or not allow_unannotated and len({tr[0] for tr in triples}) < t:
        for i in range(t):
            if not any(tr[0] == i for tr in triples):
                triples.append((i, int(rng.integers(W)), int(rng.integers(K))))
    return make_view("q", [f"c{k}" for k in range(K)], [f"t{i}" for i in range(t)],
                     [f"w{w}" for w in range(W)], triples)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
