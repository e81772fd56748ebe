import math

import numpy as np
import pytest
from scipy.stats import norm

from surroseq.boundaries import (BoundaryError, BoundarySet, ShapeFamily, SpendingFunction, apply_rule,
                                 calibrate_efficacy, calibrate_inner_wedge, check_futility_structure,
                                 inner_wedge_boundaries, naive_boundaries, shape_factors,
                                 spending_boundaries, spending_boundary_next, spending_plan)
from surroseq.effect import CorrelationModel
from surroseq.mvn import McConfig, sample_correlated


def exchangeable(J, rho):
    return CorrelationModel.from_correlation(np.full((J, J), rho) + (1 - rho) * np.eye(J))


def test_shape_factors():
    np.testing.assert_allclose(shape_factors(ShapeFamily("pocock"), 8), np.ones(8))
    np.testing.assert_allclose(shape_factors(ShapeFamily("obf"), 4), [2, math.sqrt(2), math.sqrt(4 / 3), 1])
    r = np.array([16, 24, 40]) / 40
    np.testing.assert_allclose(shape_factors(ShapeFamily("wt", 0.4), r),
                               [(16 / 40) ** -0.1, (24 / 40) ** -0.1, 1.0])


def test_family_validation():
    with pytest.raises(BoundaryError):
        ShapeFamily("triangular")
    with pytest.raises(BoundaryError):
        ShapeFamily("wt")
    with pytest.raises(BoundaryError):
        ShapeFamily("wt", 1.5)
    assert ShapeFamily("of").kind == "obrien_fleming"


def test_naive_boundaries():
    np.testing.assert_allclose(naive_boundaries("bonferroni", 8, 0.05).b, 2.734, atol=5e-4)
    np.testing.assert_allclose(naive_boundaries("unadjusted", 8, 0.05).b, 1.959964, atol=1e-6)
    fixed = naive_boundaries("fixed", 8, 0.05)
    assert np.all(np.isinf(fixed.b[:-1])) and fixed.b[-1] == pytest.approx(1.959964, abs=1e-6)


def test_sidak_calibration():
    bs = calibrate_efficacy(CorrelationModel.identity(8), ShapeFamily("pocock"), 0.05, McConfig(1_000_000, 9))
    exact = norm.ppf((1 + 0.95 ** (1 / 8)) / 2)
    assert exact == pytest.approx(2.72701, abs=1e-5)
    assert bs.constants["b"] == pytest.approx(exact, abs=0.01)
    np.testing.assert_allclose(bs.b, bs.constants["b"])


@pytest.mark.parametrize("family", [ShapeFamily("pocock"), ShapeFamily("obf"), ShapeFamily("wt", 0.4)])
def test_literal_shape_relation(family):
    model = exchangeable(5, 0.6)
    bs = calibrate_efficacy(model, family, 0.05, McConfig(100_000, 1))
    np.testing.assert_allclose(bs.b, bs.constants["b"] * shape_factors(family, 5), rtol=1e-14)


def test_boundary_nonincreasing_in_alpha():
    model = exchangeable(6, 0.7)
    cfg = McConfig(100_000, 3)
    bs = [calibrate_efficacy(model, ShapeFamily("obf"), a, cfg).constants["b"] for a in (0.01, 0.025, 0.05, 0.1)]
    assert all(x >= y for x, y in zip(bs, bs[1:]))


@pytest.mark.parametrize("family", [ShapeFamily("pocock"), ShapeFamily("obf"), ShapeFamily("wt", 0.25)])
def test_resimulation_consistency(family):
    model = exchangeable(6, 0.75)
    bs = calibrate_efficacy(model, family, 0.05, McConfig(1_000_000, 21))
    x = np.abs(sample_correlated(model.sqrt_corr, McConfig(1_000_000, 22)))
    _, rej = apply_rule(x, bs.b)
    assert rej.mean() == pytest.approx(0.05, abs=0.005)


def test_apply_rule_semantics():
    b = np.array([2.5, 2.5, 2.0])
    a = np.array([0.0, 1.0, 2.0])
    w = np.array([[3.0, 0, 0], [1.0, 0.5, 0], [1.0, 1.0, 1.0], [1.0, 1.5, 2.0], [1.0, 1.5, 1.9]])
    stop, rej = apply_rule(w, b, a)
    # row 3 touches a_2 exactly: futility is exclusive, so it continues to look 3
    assert stop.tolist() == [1, 2, 3, 3, 3]
    assert rej.tolist() == [True, False, False, True, False]
    stop, rej = apply_rule(np.array([2.5, 0.0, 0.0]), b)
    assert (stop, rej) == (1, True)


def test_inner_wedge_reference_constants():
    bs = inner_wedge_boundaries(2.455, 4.4, 0.5, 4, 8)
    np.testing.assert_allclose(bs.b, 4.4)
    assert bs.a[-1] == bs.b[-1]
    assert bs.a[3] == pytest.approx(6.855 * math.sqrt(0.5) - 2.455, abs=1e-12)
    assert bs.a[3] == pytest.approx(2.392, abs=1e-3)
    np.testing.assert_array_equal(bs.a[:3], 0.0)
    check_futility_structure(bs.a, bs.b)


def test_inner_wedge_range():
    upper = 4.4 / ((1 / 0.5) ** 0.5 - 1)
    with pytest.raises(BoundaryError, match="inner wedge parameter range violated"):
        inner_wedge_boundaries(upper, 4.4, 0.5, 4, 8)
    with pytest.raises(BoundaryError, match="inner wedge parameter range violated"):
        inner_wedge_boundaries(-4.4, 4.4, 0.5, 4, 8)
    inner_wedge_boundaries(upper * 0.999, 4.4, 0.5, 4, 8)


@pytest.mark.parametrize("delta", [0.5, 0.0, 0.4])
def test_inner_wedge_calibration(delta):
    model = exchangeable(8, 0.75)
    bs = calibrate_inner_wedge(model, delta, 4, 0.05, 0.025, McConfig(200_000, 31), family="x")
    check_futility_structure(bs.a, bs.b)
    assert bs.a[-1] == bs.b[-1]
    b, a = bs.constants["b"], bs.constants["a"]
    assert -b < a < b / ((1 / 0.5) ** (1 - delta) - 1)
    x = np.abs(sample_correlated(model.sqrt_corr, McConfig(1_000_000, 32)))
    rate = apply_rule(x, bs.b, bs.a)[1].mean()
    assert rate == pytest.approx(0.05, abs=3 * math.sqrt(0.05 * 0.95 / 200_000) + 3 * math.sqrt(0.05 * 0.95 / 1e6))
    assert bs.extra["calibration_mode"] in ("two_constraint", "alpha0_floor")
    if bs.extra["calibration_mode"] == "two_constraint":
        assert bs.extra["alpha0_achieved"] == pytest.approx(0.025, abs=0.002)


def test_inner_wedge_alpha0_equal_alpha():
    with pytest.raises(BoundaryError):
        calibrate_inner_wedge(exchangeable(8, 0.75), 0.5, 4, 0.05, 0.05, McConfig(50_000, 1))


def test_futility_structure_checks():
    with pytest.raises(BoundaryError):
        check_futility_structure(np.array([0.0, 1.0]), np.array([2.0, 2.5]))
    with pytest.raises(BoundaryError):
        check_futility_structure(np.array([3.0, 2.0]), np.array([2.0, 2.0]))


def test_spending_functions():
    for kind in ("obf_like", "pocock_like", "power"):
        f = SpendingFunction(kind, 0.05, 2.0)
        assert f(0.0) == 0.0 and f(1.0) == pytest.approx(0.05)
        vals = [f(t) for t in np.linspace(0, 1, 11)]
        assert all(x <= y for x, y in zip(vals, vals[1:]))
    assert SpendingFunction.parse("power:3").rho == 3.0
    with pytest.raises(ValueError):
        SpendingFunction.parse("linear")


def test_spending_first_look():
    spend = SpendingFunction("power", 0.05, 1.0)
    b1 = spending_boundary_next(CorrelationModel.identity(1), [], spend, [0.25, 1.0], McConfig(1_000_000, 5))
    assert b1 == pytest.approx(norm.isf(0.05 * 0.25 / 2), abs=0.01)


def test_spending_two_look_closed_form():
    spend = SpendingFunction("power", 0.05, 1.0)
    b = spending_boundaries(CorrelationModel.identity(2), spend, [0.5, 1.0], McConfig(1_000_000, 6))
    assert b[0] == pytest.approx(norm.isf(0.05 / 4), abs=0.01)
    assert b[1] == pytest.approx(norm.isf(0.025 / (2 * (1 - 0.025))), abs=0.01)


def test_spending_zero_increment_is_infinite():
    spend = SpendingFunction("power", 0.05, 1.0)
    b = spending_boundaries(CorrelationModel.identity(3), spend, [0.0 + 1e-12, 0.5, 1.0], McConfig(10_000, 1))
    assert math.isinf(b[0])


def test_spending_not_increasing():
    class Decreasing(SpendingFunction):
        def __call__(self, t):
            return 0.05 * (1 - t) + 0.01

    spend = Decreasing("power", 0.05)
    with pytest.raises(BoundaryError, match="spending function not increasing"):
        spending_boundary_next(CorrelationModel.identity(2), [2.0], spend, [0.5, 1.0], McConfig(10_000, 1))


def test_spending_total_rate():
    model = exchangeable(4, 0.6)
    spend = SpendingFunction("obf_like", 0.05)
    b = spending_boundaries(model, spend, None, McConfig(500_000, 8))
    x = np.abs(sample_correlated(model.sqrt_corr, McConfig(500_000, 9)))
    rate = apply_rule(x, b)[1].mean()
    assert rate == pytest.approx(0.05, abs=3 * math.sqrt(0.05 * 0.95 / 500_000) * 2)


def test_boundary_json_round_trip(tmp_path):
    bs = naive_boundaries("fixed", 4, 0.05).with_extra(note="x")
    bs.save(tmp_path / "b.json")
    text = (tmp_path / "b.json").read_text()
    assert "null" in text and "Infinity" not in text
    back = BoundarySet.load(tmp_path / "b.json")
    np.testing.assert_array_equal(back.b, bs.b)
    assert back.extra == {"note": "x"}
    plan = spending_plan(SpendingFunction("pocock_like"), [0.5, 1.0], McConfig(10_000, 1))
    plan.save(tmp_path / "p.json")
    assert BoundarySet.load(tmp_path / "p.json").extra["spending"]["kind"] == "pocock_like"
