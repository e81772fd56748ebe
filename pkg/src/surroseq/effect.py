"""Per-analysis effect estimates and the cross-analysis correlation model."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import AnalysisSchedule, StudyADataset, StudyBSnapshot
from .kernel import FittedConditionalMean, KernelSpec, NeighborhoodError, fit_mu, predict_mu

log = logging.getLogger(__name__)

PSD_TOL = 1e-8


class EstimationError(ValueError):
    """Raised when an effect estimate or covariance model is undefined."""


@dataclass(frozen=True)
class EffectEstimate:
    j: int
    delta_e: float
    var_hat: float
    w_stat: float
    n_b0: int
    n_b1: int

    def to_dict(self) -> dict:
        return {"j": self.j, "delta_e": self.delta_e, "var_hat": self.var_hat,
                "w_stat": self.w_stat, "n_b0": self.n_b0, "n_b1": self.n_b1}


def _mu_by_arm(f: FittedConditionalMean, b: StudyBSnapshot, j: int) -> tuple[np.ndarray, np.ndarray]:
    ids, group, col = b.column(j)
    try:
        mu = predict_mu(f, col)
    except NeighborhoodError as exc:
        bad = ids[exc.indices].tolist()
        raise NeighborhoodError(
            f"analysis {j}: no effective neighbors for Study B subject(s) {bad[:10]}"
            f"{' ...' if len(bad) > 10 else ''}", exc.indices) from exc
    return mu[group == 0], mu[group == 1]


def _delta(mu0: np.ndarray, mu1: np.ndarray) -> float:
    return float(mu1.mean() - mu0.mean())


def _var(mu0: np.ndarray, mu1: np.ndarray) -> float:
    if mu0.size < 2 or mu1.size < 2:
        raise EstimationError("each arm needs at least two subjects for a variance estimate")
    total = 0.0
    for mu in (mu0, mu1):
        # n-denominator second moment, as in the plug-in variance of the mean
        total += (np.mean(mu * mu) - np.mean(mu) ** 2) / mu.size
    return max(float(total), 0.0)


def delta_e_at(f: FittedConditionalMean, b: StudyBSnapshot, j: int) -> float:
    """Mean of the borrowed conditional mean over treated minus controls at analysis j."""
    mu0, mu1 = _mu_by_arm(f, b, j)
    return _delta(mu0, mu1)


def var_hat_at(f: FittedConditionalMean, b: StudyBSnapshot, j: int) -> float:
    """Plug-in variance of the analysis-j effect estimate."""
    mu0, mu1 = _mu_by_arm(f, b, j)
    v = _var(mu0, mu1)
    if v <= 0:
        raise EstimationError("degenerate variance")
    return v


def w_stat_at(f: FittedConditionalMean, b: StudyBSnapshot, j: int) -> EffectEstimate:
    mu0, mu1 = _mu_by_arm(f, b, j)
    delta = _delta(mu0, mu1)
    v = _var(mu0, mu1)
    if v <= 0:
        raise EstimationError("degenerate variance")
    return EffectEstimate(j, delta, v, delta / math.sqrt(v), int(mu0.size), int(mu1.size))


# ---------------------------------------------------------------------------
# Correlation model

@dataclass(frozen=True, eq=False)
class CorrelationModel:
    """Estimated covariance of the effect estimates across analyses.

    ``sigma_tilde`` is the covariance scaled to the planned Study B arm
    sizes, ``corr`` its correlation matrix after PSD repair and
    ``sqrt_corr`` a symmetric square root of ``corr``.
    """

    sigma_tilde: np.ndarray
    corr: np.ndarray
    sqrt_corr: np.ndarray
    n_b0: int
    n_b1: int
    column_map: tuple[int, ...] = ()
    kernel: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return self.corr.shape[0]

    def prefix(self, j: int) -> CorrelationModel:
        """Model restricted to the first ``j`` analyses."""
        corr = self.corr[:j, :j]
        return CorrelationModel(self.sigma_tilde[:j, :j], corr, symmetric_sqrt(corr),
                                self.n_b0, self.n_b1, self.column_map[:j], self.kernel)

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "n_b0": self.n_b0,
            "n_b1": self.n_b1,
            "column_map": list(self.column_map),
            "kernel": self.kernel,
            "sigma_tilde": self.sigma_tilde.tolist(),
            "corr": self.corr.tolist(),
            "sqrt_corr": self.sqrt_corr.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> CorrelationModel:
        return cls(np.asarray(d["sigma_tilde"], float), np.asarray(d["corr"], float),
                   np.asarray(d["sqrt_corr"], float), int(d["n_b0"]), int(d["n_b1"]),
                   tuple(d.get("column_map", ())), dict(d.get("kernel", {})))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> CorrelationModel:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def identity(cls, J: int) -> CorrelationModel:
        eye = np.eye(J)
        return cls(eye.copy(), eye.copy(), eye.copy(), 1, 1, tuple(range(1, J + 1)))

    @classmethod
    def from_correlation(cls, corr, n_b0: int = 1, n_b1: int = 1) -> CorrelationModel:
        corr = repair_correlation(np.asarray(corr, dtype=float))
        return cls(corr.copy(), corr, symmetric_sqrt(corr), n_b0, n_b1,
                   tuple(range(1, corr.shape[0] + 1)))


def repair_correlation(corr: np.ndarray, tol: float = PSD_TOL) -> np.ndarray:
    """Clamp slightly negative eigenvalues and restore a unit diagonal.

    Raises:
        EstimationError: if an eigenvalue is below ``-tol``.
    """
    corr = 0.5 * (corr + corr.T)
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() < -tol:
        raise EstimationError(f"correlation estimate not PSD (min eigenvalue {vals.min():.3g})")
    if vals.min() < 0:
        vals = np.clip(vals, 0.0, None)
        corr = (vecs * vals) @ vecs.T
        corr = 0.5 * (corr + corr.T)
    d = np.sqrt(np.diag(corr))
    corr = corr / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def symmetric_sqrt(corr: np.ndarray) -> np.ndarray:
    """Symmetric root R with R @ R.T == corr (eigenvalues clamped at zero)."""
    vals, vecs = np.linalg.eigh(0.5 * (corr + corr.T))
    root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
    return 0.5 * (root + root.T)


def _corr_from_cov(sigma: np.ndarray) -> np.ndarray:
    d = np.sqrt(np.diag(sigma))
    if np.any(d <= 0):
        raise EstimationError("degenerate variance in covariance model")
    corr = sigma / np.outer(d, d)
    np.fill_diagonal(corr, 1.0)
    return corr


def _arm_covariance(mu: np.ndarray) -> np.ndarray:
    """n-denominator covariance of the columns of ``mu`` (subjects x analyses)."""
    m = mu.mean(axis=0)
    return (mu.T @ mu) / mu.shape[0] - np.outer(m, m)


def fit_schedule(a: StudyADataset, schedule: AnalysisSchedule,
                 kernel: KernelSpec | None = None) -> list[FittedConditionalMean]:
    """Control-arm conditional means for every analysis, following the column map."""
    schedule.validate_against(a)
    cache: dict[int, FittedConditionalMean] = {}
    fits = []
    for col in schedule.studyA_column_map:
        if col not in cache:
            cache[col] = fit_mu(a, 0, col, kernel)
        fits.append(cache[col])
    return fits


def build_correlation_model(a: StudyADataset, schedule: AnalysisSchedule | None,
                            n_b0: int, n_b1: int, kernel: KernelSpec | None = None,
                            support_policy: str = "error") -> CorrelationModel:
    """Design-time covariance model from Study A data.

    For each arm g, the covariance across analyses of the borrowed control
    conditional mean evaluated at that arm's own Study A surrogates, scaled
    by the planned Study B arm size and summed over arms.

    Treated subjects can fall outside the control-arm support, where the
    conditional mean is undefined.  ``support_policy="error"`` raises in
    that case; ``"trim"`` leaves such subjects out of their arm's covariance.
    """
    if n_b0 <= 0 or n_b1 <= 0:
        raise EstimationError("planned Study B arm sizes must be positive")
    if support_policy not in ("error", "trim"):
        raise ValueError("support_policy must be 'error' or 'trim'")
    kernel = kernel or KernelSpec()
    if schedule is None:
        schedule = AnalysisSchedule.equally_spaced(a.n_times)
    fits = fit_schedule(a, schedule, kernel)
    cols = schedule.studyA_column_map
    sigma = np.zeros((len(cols), len(cols)))
    for g, n_bg in ((0, n_b0), (1, n_b1)):
        s_arm = a.arm(g)[0][:, [c - 1 for c in cols]]
        if support_policy == "trim":
            inside = np.ones(s_arm.shape[0], dtype=bool)
            for k, f in enumerate(fits):
                lo, hi = f.support
                inside &= (s_arm[:, k] >= lo) & (s_arm[:, k] <= hi)
            if not inside.all():
                log.info("arm %d: %d Study A subjects outside the control support left out",
                         g, int((~inside).sum()))
            s_arm = s_arm[inside]
            if s_arm.shape[0] < 2:
                raise EstimationError(f"arm {g}: fewer than two subjects inside the control support")
        mu = np.empty(s_arm.shape)
        for k, (f, col) in enumerate(zip(fits, cols)):
            try:
                mu[:, k] = predict_mu(f, s_arm[:, k])
            except NeighborhoodError as exc:
                raise NeighborhoodError(
                    f"Study A arm {g}, column {col}: {exc}", exc.indices) from exc
        sigma += _arm_covariance(mu) / n_bg
    sigma = 0.5 * (sigma + sigma.T)
    corr = repair_correlation(_corr_from_cov(sigma))
    return CorrelationModel(sigma, corr, symmetric_sqrt(corr), int(n_b0), int(n_b1),
                            tuple(cols), kernel.to_dict())


def correlation_from_study_b(fits: Sequence[FittedConditionalMean], b: StudyBSnapshot,
                             j: int) -> CorrelationModel:
    """Correlation of the first ``j`` statistics estimated from Study B itself.

    Used by error-spending monitoring.  Subjects must be observed at every
    one of the first ``j`` analyses to contribute.
    """
    if len(fits) < j:
        raise EstimationError("need a fitted conditional mean for every analysis")
    s = b.s[:, :j]
    keep = ~np.any(np.isnan(s), axis=1)
    s, group = s[keep], b.group[keep]
    sigma = np.zeros((j, j))
    n = {}
    for g in (0, 1):
        sg = s[group == g]
        if sg.shape[0] < 2:
            raise EstimationError("each arm needs at least two complete subjects")
        mu = np.column_stack([predict_mu(fits[k], sg[:, k]) for k in range(j)])
        sigma += _arm_covariance(mu) / sg.shape[0]
        n[g] = sg.shape[0]
    corr = repair_correlation(_corr_from_cov(0.5 * (sigma + sigma.T)))
    return CorrelationModel(sigma, corr, symmetric_sqrt(corr), n[0], n[1], tuple(range(1, j + 1)))
