import csv
import json

import numpy as np
import pytest

from surroseq.data import StudyADataset, StudyBSnapshot
from surroseq.diagnostics import (check_c1_monotone, check_c2_dominance, check_c3_stochastic_dominance,
                                  check_c4_proportion_explained, diagnose, survival, write_curves)
from surroseq.kernel import FittedConditionalMean, auto_bandwidth

from conftest import make_study_a, make_study_b
from oracles import mu_oracle


def test_c1_monotone_passes():
    s = np.linspace(0, 10, 200)
    v, status, _ = check_c1_monotone(FittedConditionalMean(s, 2 * s, 0.05))
    assert v == 0.0 and status == "pass"


def test_c1_anti_monotone_fails():
    s = np.linspace(0, 10, 200)
    v, status, _ = check_c1_monotone(FittedConditionalMean(s, -s, 0.05))
    assert v > 0.95 and status == "fail"


def test_c1_noisy_pinned():
    rng = np.random.default_rng(12)
    s = rng.normal(size=200)
    y = s + rng.normal(size=200)
    h = auto_bandwidth(s)
    v, status, d = check_c1_monotone(FittedConditionalMean(s, y, h))
    grid = np.linspace(s.min(), s.max(), 100)
    mu = [mu_oracle(s, y, h, q) for q in grid]
    tol = 1e-6 * (y.max() - y.min())
    expected = sum(mu[k + 1] < mu[k] - tol for k in range(99)) / 99
    assert v == pytest.approx(expected, abs=1e-12)
    assert v == pytest.approx(12 / 99, abs=1e-12)
    assert status == "fail" and d["grid"][2] == 100


def test_c2_identical_and_shifted():
    rng = np.random.default_rng(1)
    s = rng.normal(size=300)
    y = s + rng.normal(scale=0.2, size=300)
    f0 = FittedConditionalMean(s, y, 0.3)
    gap, status, _ = check_c2_dominance(f0, FittedConditionalMean(s, y, 0.3))
    assert gap == pytest.approx(0.0, abs=1e-12) and status == "pass"
    gap, status, _ = check_c2_dominance(f0, FittedConditionalMean(s, y + 1, 0.3))
    assert gap == pytest.approx(1.0, abs=1e-9) and status == "pass"
    gap, status, _ = check_c2_dominance(f0, FittedConditionalMean(s, y - 1, 0.3))
    assert gap == pytest.approx(-1.0, abs=1e-9) and status == "fail"


def test_c2_disjoint_support():
    f0 = FittedConditionalMean(np.array([0.0, 1.0]), np.array([0.0, 1.0]), 0.5)
    f1 = FittedConditionalMean(np.array([5.0, 6.0]), np.array([0.0, 1.0]), 0.5)
    assert check_c2_dominance(f0, f1)[1] == "undefined"


def test_survival():
    np.testing.assert_allclose(survival(np.array([1.0, 2.0, 3.0, 4.0]), np.array([0.0, 2.0, 4.0])),
                               [1.0, 0.5, 0.0])


def test_c3_cases():
    s0 = np.random.default_rng(2).normal(size=500)
    assert check_c3_stochastic_dominance(s0, s0.copy())[:2] == (0.0, "pass")
    assert check_c3_stochastic_dominance(s0, s0 + 1)[:2] == (0.0, "pass")
    v, status, _ = check_c3_stochastic_dominance(s0, s0 - 1)
    grid = np.unique(np.r_[s0, s0 - 1])
    assert v == pytest.approx(np.max(survival(s0, grid) - survival(s0 - 1, grid)))
    assert v > 0.3 and status == "fail"


def _mediation_study(effect_on_s, effect_on_y, n=400, seed=0):
    rng = np.random.default_rng(seed)
    g = np.repeat([0, 1], n)
    s = rng.normal(size=2 * n) + effect_on_s * g
    y = 2 + s + effect_on_y * g + rng.normal(scale=0.5, size=2 * n)
    return StudyADataset([str(i) for i in range(2 * n)], g, y, s[:, None], [1.0])


def test_c4_full_mediation():
    a = _mediation_study(0.5, 0.0)
    r, status, d = check_c4_proportion_explained(a, 1)
    (s0, y0), (s1, y1) = a.arm(0), a.arm(1)
    s0, s1 = s0[:, 0], s1[:, 0]
    h0, h1 = auto_bandwidth(s0), auto_bandwidth(s1)
    resid = np.mean([mu_oracle(s1, y1, h1, q) - mu_oracle(s0, y0, h0, q) for q in s0])
    expected = 1 - resid / (y1.mean() - y0.mean())
    assert r == pytest.approx(expected, rel=1e-10)
    assert r == pytest.approx(0.908070, abs=1e-6)
    assert status == "pass" and d["total_effect"] > 0


def test_c4_no_mediation():
    r, status, _ = check_c4_proportion_explained(_mediation_study(0.0, 1.0), 1)
    assert abs(r) < 0.15 and status == "fail"


def test_c4_zero_total_effect():
    a = StudyADataset(["1", "2", "3", "4"], [0, 0, 1, 1], [1.0, 2.0, 2.0, 1.0],
                      np.array([[0.0], [1.0], [0.2], [0.9]]), [1.0])
    assert check_c4_proportion_explained(a, 1)[1] == "undefined"


def test_c4_small_effect_warns():
    a = _mediation_study(0.0, 0.02, n=100, seed=3)
    assert check_c4_proportion_explained(a, 1)[1] == "warn"


def test_diagnose_report_and_curves(tmp_path):
    a = make_study_a(n0=60, n1=60)
    b = make_study_b(a, n0=30, n1=30)
    report, curves = diagnose(a, b)
    checks = {(r.check, r.analysis) for r in report.results}
    for j in (1, 2, 3):
        for c in ("C1", "C2", "C3_A", "C3_B", "C4", "C5"):
            assert (c, j) in checks
    assert report.status("C5", 1) == "pass"
    report.save(tmp_path / "report.json")
    json.loads((tmp_path / "report.json").read_text())
    write_curves(curves, tmp_path / "curves.csv")
    rows = list(csv.DictReader(open(tmp_path / "curves.csv")))
    assert len(rows) == 300 and {"mu_a0", "surv_b1"} <= set(rows[0])


def test_diagnose_flags_out_of_support():
    a = make_study_a(n0=60, n1=60)
    b = make_study_b(a, n0=30, n1=30)
    s = b.s.copy()
    s[0, 1] = 1e3
    report, _ = diagnose(a, StudyBSnapshot(b.ids, b.group, s))
    assert report.status("C5", 2) == "fail"
    assert report.status("C5", 1) == "pass"


def test_diagnose_row_order_invariant():
    a = make_study_a(n0=60, n1=60)
    perm = np.random.default_rng(0).permutation(120)
    a2 = StudyADataset(a.ids[perm], a.group[perm], a.y[perm], a.s[perm], a.schedule_times)
    r1, _ = diagnose(a)
    r2, _ = diagnose(a2)
    for x, y in zip(r1.results, r2.results):
        assert x.status == y.status
        assert x.value == pytest.approx(y.value, rel=1e-9, abs=1e-12)
