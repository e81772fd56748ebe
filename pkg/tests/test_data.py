import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from surroseq.data import (AnalysisSchedule, DataError, StudyADataset, StudyBSnapshot, check_support_c5,
                           load_study_a, load_study_b, observed_columns, write_study_a, write_study_b)

from conftest import make_study_a, make_study_b


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_study_a_four_rows(tmp_path):
    p = write(tmp_path / "a.csv", "id,group,y,s_1,s_2\n1,0,1.0,0.1,0.2\n2,0,2.0,0.3,0.4\n"
                                  "3,1,3.0,0.5,0.6\n4,1,4.0,0.7,0.8\n")
    a = load_study_a(p)
    assert (a.n0, a.n1, a.n_times, a.n_dropped) == (2, 2, 2, 0)
    np.testing.assert_array_equal(a.schedule_times, [1.0, 2.0])


def test_load_study_a_drops_incomplete_rows(tmp_path):
    p = write(tmp_path / "a.csv", "id,group,y,s_1,s_2\n1,0,1.0,0.1,0.2\n2,0,2.0,0.3,\n"
                                  "3,1,3.0,0.5,0.6\n4,1,4.0,0.7,0.8\n")
    a = load_study_a(p)
    assert a.n_dropped == 1
    assert list(a.ids) == ["1", "3", "4"]


def test_load_study_a_bad_group(tmp_path):
    p = write(tmp_path / "a.csv", "id,group,y,s_1\n1,0,1.0,0.1\n2,2,2.0,0.3\n")
    with pytest.raises(DataError, match="invalid group label"):
        load_study_a(p)


def test_study_a_requires_both_arms():
    with pytest.raises(DataError, match="empty treatment arm"):
        StudyADataset(["a", "b"], [0, 0], [1.0, 2.0], [[0.1], [0.2]], [1.0])
    with pytest.raises(DataError, match="empty control arm"):
        StudyADataset(["a", "b"], [1, 1], [1.0, 2.0], [[0.1], [0.2]], [1.0])


def test_study_a_times_strictly_increasing():
    with pytest.raises(DataError, match="strictly increasing"):
        StudyADataset(["a", "b"], [0, 1], [1.0, 2.0], [[0.1, 0.2], [0.2, 0.3]], [2.0, 2.0])


def test_study_a_negative_outcome_warns(caplog):
    StudyADataset(["a", "b"], [0, 1], [-1.0, 2.0], [[0.1], [0.2]], [1.0])
    assert "negative outcomes" in caplog.text


def test_load_study_b_partial_columns(tmp_path):
    p = write(tmp_path / "b.csv", "id,group,s_1,s_2,s_3,s_4\n1,0,1,2,3,4\n2,1,1,2,3,4\n3,0,1,2,3,4\n")
    b = load_study_b(p, 3)
    assert b.j_obs == 3
    with pytest.raises(DataError, match="analysis column missing"):
        load_study_b(p, 5)


def test_load_study_b_empty_treatment_arm(tmp_path):
    p = write(tmp_path / "b.csv", "id,group,s_1\n1,0,1.0\n2,1,\n3,0,2.0\n")
    with pytest.raises(DataError, match="empty treatment arm"):
        load_study_b(p, 1)


def test_study_b_missing_values_complete_case_per_analysis(tmp_path):
    p = write(tmp_path / "b.csv", "id,group,s_1,s_2\n1,0,1.0,2.0\n2,1,1.5,\n3,0,2.0,2.5\n4,1,0.5,1.0\n")
    b = load_study_b(p, 2)
    assert b.column(1)[0].tolist() == ["1", "2", "3", "4"]
    assert b.column(2)[0].tolist() == ["1", "3", "4"]


def test_observed_columns(tmp_path):
    p = write(tmp_path / "b.csv", "id,group,s_1,s_2,s_3\n1,0,1.0,2.0,\n2,1,1.5,,\n")
    assert observed_columns(p) == 2


def test_round_trip(tmp_path, study_a, study_b):
    write_study_a(study_a, tmp_path / "a.csv")
    write_study_b(study_b, tmp_path / "b.csv")
    assert load_study_a(tmp_path / "a.csv").equals(study_a)
    assert load_study_b(tmp_path / "b.csv", study_b.j_obs).equals(study_b)


@settings(max_examples=20, deadline=None)
@given(st.permutations(list(range(30))))
def test_ingestion_order_invariant(tmp_path_factory, perm):
    a = make_study_a()
    tmp = tmp_path_factory.mktemp("perm")
    idx = np.array(perm)
    shuffled = StudyADataset(a.ids[idx], a.group[idx], a.y[idx], a.s[idx], a.schedule_times)
    write_study_a(shuffled, tmp / "a.csv")
    assert load_study_a(tmp / "a.csv").sorted_by_id().equals(a.sorted_by_id())


def test_schedule_validation():
    with pytest.raises(DataError):
        AnalysisSchedule((1.0, 1.0), (1, 2))
    with pytest.raises(DataError):
        AnalysisSchedule((1.0, 2.0), (0, 2))
    with pytest.raises(DataError):
        AnalysisSchedule((1.0, 2.0), (1, 2), j0=3)
    s = AnalysisSchedule((16.0, 24.0, 40.0), (1, 2, 3))
    np.testing.assert_allclose(s.fractions, [0.4, 0.6, 1.0])
    with pytest.raises(DataError, match="column 3"):
        s.validate_against(make_study_a(J=2))


def _support_fixture(b_values):
    n = 50
    a = StudyADataset([f"a{i}" for i in range(2 * n)], [0] * n + [1] * n, np.ones(2 * n),
                      np.r_[np.linspace(0, 10, n), np.linspace(0, 10, n)][:, None], [1.0])
    b_values = np.asarray(b_values, float)
    g = np.arange(b_values.size) % 2
    b = StudyBSnapshot([f"b{i}" for i in range(b_values.size)], g, b_values[:, None])
    return a, b


def test_support_inside():
    a, b = _support_fixture(np.linspace(1, 9, 100))
    rep = check_support_c5(a, b)
    assert rep.entries[0].fraction_outside == 0 and rep.status == "pass"


def test_support_one_outside_fails():
    vals = np.linspace(1, 9, 100)
    vals[7] = 11.0
    a, b = _support_fixture(vals)
    rep = check_support_c5(a, b)
    assert rep.entries[0].fraction_outside == pytest.approx(0.01)
    assert rep.status == "fail"
    assert check_support_c5(a, b, tolerance=0.02).status == "warn"


def test_support_closed_interval():
    a, b = _support_fixture([0.0, 10.0, 5.0, 5.0])
    assert check_support_c5(a, b).status == "pass"


def test_study_b_helpers(study_a):
    b = make_study_b(study_a)
    assert b.truncated(2).j_obs == 2
    np.testing.assert_array_equal(b.swapped_groups().group, 1 - b.group)
    with pytest.raises(DataError, match="analysis column missing"):
        b.column(4)
