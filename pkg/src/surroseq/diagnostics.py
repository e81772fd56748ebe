"""Empirical checks of the surrogate assumptions that data can speak to.

The checks are grid-based summaries with configurable thresholds, not
formal hypothesis tests.  C6 and C7 involve unobservable quantities and are
not checked.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import StudyADataset, StudyBSnapshot, check_support_c5
from .kernel import FittedConditionalMean, KernelSpec, NeighborhoodError, fit_mu, predict_mu

PASS, WARN, FAIL, UNDEFINED = "pass", "warn", "fail", "undefined"


@dataclass(frozen=True)
class CheckResult:
    analysis: int
    check: str
    status: str
    value: float | None
    detail: dict = field(default_factory=dict)


@dataclass
class AssumptionReport:
    results: list[CheckResult] = field(default_factory=list)

    def add(self, result: CheckResult) -> None:
        self.results.append(result)

    def status(self, check: str, analysis: int) -> str:
        for r in self.results:
            if r.check == check and r.analysis == analysis:
                return r.status
        raise KeyError((check, analysis))

    def to_dict(self) -> dict:
        return {"results": [_jsonable(asdict(r)) for r in self.results]}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _safe_curve(f: FittedConditionalMean, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Evaluate on the grid, dropping points without kernel neighbours."""
    try:
        return grid, predict_mu(f, grid), 0
    except NeighborhoodError as exc:
        keep = np.ones(grid.size, dtype=bool)
        keep[exc.indices] = False
        grid = grid[keep]
        return grid, predict_mu(f, grid), int((~keep).sum())


def check_c1_monotone(f: FittedConditionalMean, grid_size: int = 100, fail_fraction: float = 0.05,
                      tol: float | None = None) -> tuple[float, str, dict]:
    """Fraction of adjacent grid pairs where the control conditional mean decreases.

    The tolerance defaults to 1e-6 times the outcome range.
    """
    lo, hi = f.support
    grid, mu, dropped = _safe_curve(f, np.linspace(lo, hi, grid_size))
    if tol is None:
        tol = 1e-6 * float(np.ptp(f.y))
    if grid.size < 2:
        return math.nan, UNDEFINED, {"grid_points": int(grid.size), "dropped": dropped}
    frac = float(np.mean(np.diff(mu) < -tol))
    status = FAIL if frac > fail_fraction else WARN if frac > 0 else PASS
    detail = {"grid": [float(grid[0]), float(grid[-1]), int(grid.size)], "dropped": dropped, "tol": tol}
    return frac, status, detail


def check_c2_dominance(f0: FittedConditionalMean, f1: FittedConditionalMean, grid_size: int = 100,
                       tol: float | None = None) -> tuple[float, str, dict]:
    """Smallest treated-minus-control conditional mean gap on the common support.

    ``tol`` defaults to 0.1 times the control outcome standard deviation;
    negative gaps within the tolerance are a warning.
    """
    lo = max(f0.support[0], f1.support[0])
    hi = min(f0.support[1], f1.support[1])
    if tol is None:
        tol = 0.1 * float(np.std(f0.y))
    if not hi > lo:
        return math.nan, UNDEFINED, {"reason": "arms have disjoint surrogate support"}
    grid = np.linspace(lo, hi, grid_size)
    grid, _, dropped0 = _safe_curve(f0, grid)
    grid, _, dropped1 = _safe_curve(f1, grid)
    if grid.size == 0:
        return math.nan, UNDEFINED, {"reason": "no grid point with kernel support"}
    gap = float(np.min(predict_mu(f1, grid) - predict_mu(f0, grid)))
    status = PASS if gap >= 0 else WARN if gap >= -tol else FAIL
    return gap, status, {"grid": [float(lo), float(hi), int(grid.size)],
                         "dropped": dropped0 + dropped1, "tol": tol}


def survival(sample: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Empirical P(S > s) on the grid."""
    sample = np.sort(np.asarray(sample, dtype=float))
    return 1.0 - np.searchsorted(sample, grid, side="right") / sample.size


def check_c3_stochastic_dominance(s0: np.ndarray, s1: np.ndarray, grid: np.ndarray | None = None,
                                  level: float = 0.05) -> tuple[float, str, dict]:
    """Largest positive excess of the control over the treated survival curve.

    The default grid is every observed value, which gives the exact
    supremum.  The fail threshold is the one-sided two-sample
    Kolmogorov-Smirnov critical value at ``level``.
    """
    s0 = np.asarray(s0, dtype=float)
    s1 = np.asarray(s1, dtype=float)
    if grid is None:
        grid = np.unique(np.concatenate([s0, s1]))
    excess = survival(s0, grid) - survival(s1, grid)
    violation = float(max(0.0, excess.max()))
    n0, n1 = s0.size, s1.size
    crit = math.sqrt(-math.log(level) / 2.0 * (n0 + n1) / (n0 * n1))
    status = FAIL if violation > crit else WARN if violation > 0 else PASS
    return violation, status, {"critical_value": crit, "grid_points": int(np.size(grid))}


def check_c4_proportion_explained(a: StudyADataset, j: int, kernel: KernelSpec | None = None,
                                  threshold: float = 0.5) -> tuple[float, str, dict]:
    """Nonparametric proportion of the Study A treatment effect explained at column j.

    R_j = 1 - residual / total, where the residual effect averages the
    treated-minus-control conditional mean gap over the control surrogates.
    """
    s0, y0 = a.arm(0)
    _, y1 = a.arm(1)
    s0 = s0[:, j - 1]
    total = float(y1.mean() - y0.mean())
    if total == 0.0:
        return math.nan, UNDEFINED, {"total_effect": 0.0}
    f0 = fit_mu(a, 0, j, kernel)
    f1 = fit_mu(a, 1, j, kernel)
    try:
        residual = float(np.mean(predict_mu(f1, s0) - predict_mu(f0, s0)))
    except NeighborhoodError as exc:
        return math.nan, UNDEFINED, {"reason": str(exc)}
    pte = 1.0 - residual / total
    se = math.sqrt(y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size)
    detail = {"total_effect": total, "residual_effect": residual, "total_effect_se": se}
    if abs(total) < 2 * se:
        # total effect indistinguishable from zero: the ratio is unreliable
        status = WARN
    else:
        status = FAIL if pte < threshold else PASS
    return pte, status, detail


def diagnose(a: StudyADataset, b: StudyBSnapshot | None = None, col_map: Sequence[int] | None = None,
             kernel: KernelSpec | None = None, grid_size: int = 100,
             support_tolerance: float = 0.0) -> tuple[AssumptionReport, list[dict]]:
    """Run C1-C5 for every analysis; returns the report and plot-ready curve rows.

    C1, C2 and C4 are evaluated on Study A columns, C3 in both studies, C5
    on Study B against Study A.
    """
    report = AssumptionReport()
    J = b.j_obs if b is not None else a.n_times
    if col_map is None:
        col_map = list(range(1, J + 1))
    curves: list[dict] = []
    for j in range(1, J + 1):
        col = col_map[j - 1]
        f0 = fit_mu(a, 0, col, kernel)
        f1 = fit_mu(a, 1, col, kernel)
        v, st, d = check_c1_monotone(f0, grid_size)
        report.add(CheckResult(j, "C1", st, v, {**d, "studyA_column": col}))
        v, st, d = check_c2_dominance(f0, f1, grid_size)
        report.add(CheckResult(j, "C2", st, v, {**d, "studyA_column": col}))
        sa0 = a.arm(0)[0][:, col - 1]
        sa1 = a.arm(1)[0][:, col - 1]
        v, st, d = check_c3_stochastic_dominance(sa0, sa1)
        report.add(CheckResult(j, "C3_A", st, v, {**d, "studyA_column": col}))
        if b is not None:
            sb0, sb1 = b.arm_values(j, 0), b.arm_values(j, 1)
            v, st, d = check_c3_stochastic_dominance(sb0, sb1)
            report.add(CheckResult(j, "C3_B", st, v, d))
        v, st, d = check_c4_proportion_explained(a, col, kernel)
        report.add(CheckResult(j, "C4", st, v, {**d, "studyA_column": col}))

        lo, hi = f0.support
        grid = np.linspace(lo, hi, grid_size)
        mu0 = _curve_or_nan(f0, grid)
        mu1 = _curve_or_nan(f1, grid)
        for k, s in enumerate(grid):
            row = {"analysis": j, "s": float(s), "mu_a0": mu0[k], "mu_a1": mu1[k],
                   "surv_a0": float(survival(sa0, s)), "surv_a1": float(survival(sa1, s))}
            if b is not None:
                row["surv_b0"] = float(survival(sb0, s))
                row["surv_b1"] = float(survival(sb1, s))
            curves.append(row)

    if b is not None:
        support = check_support_c5(a, b, col_map, support_tolerance)
        for e in support.entries:
            report.add(CheckResult(e.analysis, "C5", e.status, e.fraction_outside,
                                   {"support": list(e.support), "n_outside": e.n_outside,
                                    "n_total": e.n_total, "studyA_column": e.studyA_column}))
    return report, curves


def _curve_or_nan(f: FittedConditionalMean, grid: np.ndarray) -> list[float]:
    out = []
    for s in grid:
        try:
            out.append(float(predict_mu(f, [s])[0]))
        except NeighborhoodError:
            out.append(math.nan)
    return out


def write_curves(rows: list[dict], path) -> None:
    if not rows:
        return
    fields = list(rows[0].keys())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()})
