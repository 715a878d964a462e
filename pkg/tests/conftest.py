import numpy as np
import pytest

from reweval.dataset import Snapshot

_criteria: dict[int, dict] = {}


def random_snapshot(rng, max_users=30, max_items=10, density=0.35, min_users=1, min_items=1):
    """Random snapshot with at least one edge; some users may be empty."""
    n_u = int(rng.integers(min_users, max_users + 1))
    n_i = int(rng.integers(min_items, max_items + 1))
    dense = rng.random((n_u, n_i)) < density
    if not dense.any():
        dense[rng.integers(n_u), rng.integers(n_i)] = True
    users, items = np.nonzero(dense)
    return Snapshot(users, items, (n_u, n_i))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion of the running test."""
    marker = request.node.get_closest_marker("criterion")

    def add(text):
        number, title = marker.args
        _criteria.setdefault(number, {"title": title, "ok": True, "seen": False, "notes": []})
        _criteria[number].setdefault("notes", []).append(text)

    return add


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "seen": False})
    entry["seen"] = True
    if call.excinfo is not None and not call.excinfo.errisinstance(pytest.skip.Exception):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {entry['title']}")
        for text in entry.get("notes", []):
            terminalreporter.write_line(f"    {text}")
