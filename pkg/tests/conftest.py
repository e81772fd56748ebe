import numpy as np
import pytest

from surroseq.data import StudyADataset, StudyBSnapshot

_ACCEPTANCE: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        number, title = marker.args
        entry = _ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "tests": 0})
        entry["tests"] += 1
        entry["ok"] = entry["ok"] and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        verdict = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {number}: {verdict} - {e['title']} ({e['tests']} checks)")


def make_study_a(seed=0, n0=15, n1=15, J=3, effect=0.5):
    rng = np.random.default_rng(seed)
    group = np.repeat([0, 1], [n0, n1])
    u = rng.normal(size=(n0 + n1, 1))
    s = np.arange(1, J + 1) * 0.5 + u + group[:, None] * effect + rng.normal(0, 0.5, (n0 + n1, J))
    y = 2 + s[:, -1] + rng.normal(size=n0 + n1)
    ids = np.array([f"a{i:03d}" for i in range(n0 + n1)])
    return StudyADataset(ids, group, y, s, np.arange(1, J + 1, dtype=float))


def make_study_b(a, seed=1, n0=10, n1=10, effect=0.3):
    """Study B drawn inside the Study A control support of each column."""
    rng = np.random.default_rng(seed)
    s0, _ = a.arm(0)
    lo, hi = s0.min(axis=0), s0.max(axis=0)
    group = np.repeat([0, 1], [n0, n1])
    width = hi - lo
    base = rng.uniform(0.15, 0.85 - 0.1 * effect, size=(n0 + n1, 1))
    s = lo + width * (base + 0.1 * effect * group[:, None] + rng.uniform(-0.05, 0.05, (n0 + n1, a.n_times)))
    ids = np.array([f"b{i:03d}" for i in range(n0 + n1)])
    return StudyBSnapshot(ids, group, s, a.schedule_times)


@pytest.fixture
def study_a():
    return make_study_a()


@pytest.fixture
def study_b(study_a):
    return make_study_b(study_a)
