"""Stopping boundaries: power-family efficacy, inner-wedge futility, naive
references and error-spending boundaries, all calibrated by Monte Carlo
against a :class:`~surroseq.effect.CorrelationModel`.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .effect import CorrelationModel
from .mvn import McConfig, sample_correlated, upper_alpha_quantile

log = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-4
BRACKET = (0.0, 10.0)
# how far inside the open admissible interval for ``a`` the solver may go
_EDGE = 1e-3

FAMILY_ALIASES = {
    "pocock": "pocock",
    "p": "pocock",
    "obrien_fleming": "obrien_fleming",
    "obf": "obrien_fleming",
    "of": "obrien_fleming",
    "wang_tsiatis": "wang_tsiatis",
    "wt": "wang_tsiatis",
    "unadjusted": "unadjusted",
    "bonferroni": "bonferroni",
    "fixed": "fixed",
}


class BoundaryError(ValueError):
    """Invalid boundary parameters or a calibration without a solution."""


@dataclass(frozen=True)
class ShapeFamily:
    kind: str
    delta: float | None = None

    def __post_init__(self) -> None:
        kind = FAMILY_ALIASES.get(self.kind.lower())
        if kind is None:
            raise BoundaryError(f"unknown boundary family {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == "wang_tsiatis":
            if self.delta is None:
                raise BoundaryError("wang_tsiatis needs a delta")
            if self.delta > 1:
                raise BoundaryError("delta must be <= 1")
        elif kind == "pocock":
            object.__setattr__(self, "delta", 0.5)
        elif kind == "obrien_fleming":
            object.__setattr__(self, "delta", 0.0)

    @property
    def calibrated(self) -> bool:
        return self.kind in ("pocock", "obrien_fleming", "wang_tsiatis")


def _fractions(J_or_fractions) -> np.ndarray:
    if np.isscalar(J_or_fractions):
        J = int(J_or_fractions)
        return np.arange(1, J + 1) / J
    r = np.asarray(J_or_fractions, dtype=float)
    if r.ndim != 1 or r.size == 0 or np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise BoundaryError("fractions must be positive and strictly increasing")
    return r / r[-1]


def shape_factors(family: ShapeFamily, fractions) -> np.ndarray:
    """Relative boundary heights; ``fractions`` is J (equal spacing) or t_j/t_J."""
    r = _fractions(fractions)
    if family.kind == "pocock":
        return np.ones_like(r)
    if family.kind == "obrien_fleming":
        return np.sqrt(1.0 / r)
    if family.kind == "wang_tsiatis":
        return r ** (family.delta - 0.5)
    return np.ones_like(r)


def _inf_to_none(values) -> list | None:
    if values is None:
        return None
    return [None if not math.isfinite(v) else float(v) for v in values]


def _none_to_inf(values) -> np.ndarray | None:
    if values is None:
        return None
    return np.array([math.inf if v is None else float(v) for v in values])


@dataclass(frozen=True, eq=False)
class BoundarySet:
    """Per-analysis efficacy boundaries ``b`` and optional futility ``a``.

    An infinite ``b_j`` means rejection is impossible at that look.  The
    ``spending`` family carries no precomputed ``b``; boundaries are produced
    look by look while monitoring.
    """

    family: str
    b: np.ndarray
    fractions: np.ndarray
    alpha: float
    a: np.ndarray | None = None
    delta: float | None = None
    alpha0: float | None = None
    j0: int | None = None
    B: int | None = None
    seed: int | None = None
    constants: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        b = np.asarray(self.b, dtype=float)
        r = np.asarray(self.fractions, dtype=float)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "fractions", r)
        if self.family == "spending":
            if "spending" not in self.extra:
                raise BoundaryError("spending boundary sets need a spending function")
            return
        if b.shape != r.shape:
            raise BoundaryError("one efficacy boundary per analysis required")
        if np.any(~(b > 0)):
            raise BoundaryError("efficacy boundaries must be positive")
        if self.a is not None:
            a = np.asarray(self.a, dtype=float)
            object.__setattr__(self, "a", a)
            check_futility_structure(a, b)

    @property
    def J(self) -> int:
        return self.fractions.size

    @property
    def has_futility(self) -> bool:
        return self.a is not None

    def to_dict(self) -> dict:
        d = {
            "family": self.family,
            "alpha": None if math.isnan(self.alpha) else self.alpha,
            "alpha0": self.alpha0,
            "j0": self.j0,
            "delta": self.delta,
            "B": self.B,
            "seed": self.seed,
            "fractions": self.fractions.tolist(),
            "b": _inf_to_none(self.b),
            "a": _inf_to_none(self.a),
            "constants": self.constants,
        }
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> BoundarySet:
        known = {"family", "alpha", "alpha0", "j0", "delta", "B", "seed",
                 "fractions", "b", "a", "constants"}
        extra = {k: v for k, v in d.items() if k not in known}
        return cls(
            family=d["family"], b=_none_to_inf(d["b"]), fractions=np.asarray(d["fractions"], float),
            alpha=math.nan if d["alpha"] is None else float(d["alpha"]), a=_none_to_inf(d.get("a")), delta=d.get("delta"),
            alpha0=d.get("alpha0"), j0=d.get("j0"), B=d.get("B"), seed=d.get("seed"),
            constants=dict(d.get("constants") or {}), extra=extra)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> BoundarySet:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def with_extra(self, **kw) -> BoundarySet:
        return replace(self, extra={**self.extra, **kw})


def check_futility_structure(a: np.ndarray, b: np.ndarray) -> None:
    """0 <= a_j < b_j before the last analysis and a_J == b_J."""
    if a.shape != b.shape:
        raise BoundaryError("futility and efficacy boundaries differ in length")
    if np.any(a[:-1] < 0) or np.any(a[:-1] >= b[:-1]):
        raise BoundaryError("futility boundaries must satisfy 0 <= a_j < b_j before the last analysis")
    if a[-1] != b[-1]:
        raise BoundaryError("futility boundary must equal the efficacy boundary at the last analysis")


# ---------------------------------------------------------------------------
# Applying a stopping rule to many statistic paths

def apply_rule(abs_w: np.ndarray, b: np.ndarray, a: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stop analysis (1-based) and rejection flag for each row of ``|W|``.

    Rejection is inclusive (|W| >= b_j), futility exclusive (|W| < a_j).
    Rows that never cross stop at J without rejecting.
    """
    abs_w = np.atleast_2d(abs_w)
    J = abs_w.shape[1]
    rej = abs_w >= b
    stop = rej if a is None else rej | (abs_w < a)
    any_stop = stop.any(axis=1)
    first = np.where(any_stop, stop.argmax(axis=1), J - 1)
    rejected = rej[np.arange(abs_w.shape[0]), first]
    return first + 1, rejected


# ---------------------------------------------------------------------------
# Efficacy-only boundaries

def naive_boundaries(kind: str, J_or_fractions, alpha: float) -> BoundarySet:
    """Unadjusted, Bonferroni or fixed-sample reference boundaries (no Monte Carlo)."""
    r = _fractions(J_or_fractions)
    J = r.size
    kind = FAMILY_ALIASES.get(kind, kind)
    if kind == "unadjusted":
        b = np.full(J, norm.ppf(1 - alpha / 2))
    elif kind == "bonferroni":
        b = np.full(J, norm.ppf(1 - alpha / (2 * J)))
    elif kind == "fixed":
        b = np.full(J, math.inf)
        b[-1] = norm.ppf(1 - alpha / 2)
    else:
        raise BoundaryError(f"{kind!r} is not a reference family")
    return BoundarySet(kind, b, r, alpha, constants={"b": float(b[-1])})


def calibrate_efficacy(model: CorrelationModel, family: ShapeFamily | str, alpha: float,
                       cfg: McConfig | None = None, fractions=None) -> BoundarySet:
    """Efficacy-only boundaries b_j = b * shape_j at level ``alpha``.

    ``b`` is the upper-alpha Monte Carlo quantile of max_j |X_j| / shape_j
    with X drawn from the model's correlation.
    """
    if isinstance(family, str):
        family = ShapeFamily(family, 0.4 if FAMILY_ALIASES.get(family) == "wang_tsiatis" else None)
    if not 0 < alpha <= 0.5:
        raise BoundaryError("alpha must lie in (0, 0.5]")
    r = _fractions(model.J if fractions is None else fractions)
    if r.size != model.J:
        raise BoundaryError("fractions and correlation model differ in dimension")
    if not family.calibrated:
        return naive_boundaries(family.kind, r, alpha)
    cfg = cfg or McConfig()
    shape = shape_factors(family, r)
    x = sample_correlated(model.sqrt_corr, cfg)
    stat = np.max(np.abs(x) / shape, axis=1)
    b = upper_alpha_quantile(stat, alpha)
    return BoundarySet(family.kind, b * shape, r, alpha, delta=family.delta,
                       B=cfg.B, seed=cfg.seed, constants={"b": b})


# ---------------------------------------------------------------------------
# Inner-wedge futility boundaries

def _wedge_upper(b: float, delta: float, j0: int, J: int, r_j0: float | None = None) -> float:
    r0 = j0 / J if r_j0 is None else r_j0
    c = (1.0 / r0) ** (1.0 - delta) - 1.0
    return math.inf if c <= 0 else b / c


def _wedge_arrays(a: float, b: float, delta: float, j0: int, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    bj = b * r ** (delta - 0.5)
    aj = (a + b) * np.sqrt(r) - a * r ** (delta - 0.5)
    aj = np.where(np.arange(1, r.size + 1) >= j0, aj, 0.0)
    aj[-1] = bj[-1]
    return aj, bj


def inner_wedge_boundaries(a: float, b: float, delta: float, j0: int, fractions) -> BoundarySet:
    """Power-family inner-wedge boundaries from the constants (a, b).

    Requires b > 0, delta <= 1 and -b < a < b / ((1/r_j0)^(1-delta) - 1).
    """
    r = _fractions(fractions)
    J = r.size
    if not 1 <= j0 <= J:
        raise BoundaryError("j0 must lie in [1, J]")
    upper = _wedge_upper(b, delta, j0, J, r[j0 - 1])
    if not (b > 0 and delta <= 1 and -b < a < upper):
        raise BoundaryError(
            f"inner wedge parameter range violated: need b > 0, delta <= 1, {-b:.4g} < a < {upper:.4g}")
    aj, bj = _wedge_arrays(a, b, delta, j0, r)
    return BoundarySet("inner_wedge", bj, r, alpha=math.nan, a=aj, delta=delta, j0=j0,
                       constants={"a": float(a), "b": float(b)})


def _bisect(fn: Callable[[float], float], lo: float, hi: float, target: float,
            increasing: bool, tol: float = BOUNDARY_TOL) -> float:
    """Root of a monotone step function by bisection on [lo, hi]."""
    sign = 1.0 if increasing else -1.0
    for _ in range(200):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if sign * (fn(mid) - target) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def calibrate_inner_wedge(model: CorrelationModel, delta: float, j0: int, alpha: float,
                          alpha0: float, cfg: McConfig | None = None, fractions=None,
                          family: str | None = None) -> BoundarySet:
    """Calibrate (a, b) so the inner-wedge test has null rejection rate ``alpha``.

    The two constraints are solved on one common draw set:

    1. rejection probability accrued by analysis ``j0`` equals ``alpha0``.
       No futility stop is possible before ``j0`` and rejection at ``j0``
       does not depend on ``a``, so this fixes ``b`` as a max-statistic
       quantile over the first ``j0`` analyses;
    2. total rejection probability equals ``alpha``, solved for ``a`` by
       bisection (the rejection rate increases with ``a``).

    When ``alpha0`` is below the smallest attainable value (the weakest
    admissible wedge still spends more than ``alpha0`` by ``j0``), the
    wedge shape is pinned just inside the admissible edge
    (a = (1 - 1e-3) * upper limit, relative to b) and ``b`` alone is solved
    for level ``alpha``; the achieved value is reported in
    ``extra["alpha0_achieved"]``.
    """
    if not 0 < alpha0 < alpha <= 0.5:
        raise BoundaryError("need 0 < alpha0 < alpha <= 0.5")
    if delta > 1:
        raise BoundaryError("delta must be <= 1")
    cfg = cfg or McConfig()
    r = _fractions(model.J if fractions is None else fractions)
    J = r.size
    if r.size != model.J:
        raise BoundaryError("fractions and correlation model differ in dimension")
    if not 1 <= j0 <= J:
        raise BoundaryError("j0 must lie in [1, J]")

    abs_x = np.abs(sample_correlated(model.sqrt_corr, cfg))
    shape = r ** (delta - 0.5)
    se_floor = lambda p: max(2.0 * math.sqrt(p * (1 - p) / cfg.B), 1e-4)  # noqa: E731

    def total(a: float, b: float) -> float:
        aj, bj = _wedge_arrays(a, b, delta, j0, r)
        return float(apply_rule(abs_x, bj, aj)[1].mean())

    def prefix_rate(b: float) -> float:
        return float(np.mean(np.any(abs_x[:, :j0] >= b * shape[:j0], axis=1)))

    b = upper_alpha_quantile(np.max(abs_x[:, :j0] / shape[:j0], axis=1), alpha0)
    upper = _wedge_upper(b, delta, j0, J, r[j0 - 1])
    a_hi = b * (1 - _EDGE) / ((1.0 / r[j0 - 1]) ** (1.0 - delta) - 1.0) if math.isfinite(upper) else 50.0 * b
    a_lo = -b * (1 - _EDGE)
    p_lo, p_hi = total(a_lo, b), total(a_hi, b)
    diagnostics = {"prefix_rate": prefix_rate(b), "rate_at_a_lo": p_lo, "rate_at_a_hi": p_hi}

    if p_lo >= alpha - se_floor(alpha):
        raise BoundaryError(f"inner wedge calibration infeasible: {diagnostics}")
    if p_hi >= alpha:
        a = _bisect(lambda v: total(v, b), a_lo, a_hi, alpha, increasing=True)
        mode = "two_constraint"
    else:
        # alpha0 unattainable: fix the weakest admissible wedge, solve b for alpha
        if not math.isfinite(upper):
            raise BoundaryError(f"inner wedge calibration infeasible: {diagnostics}")
        ratio = a_hi / b
        b = _bisect(lambda v: total(ratio * v, v), 1e-3, BRACKET[1], alpha, increasing=False)
        a = ratio * b
        mode = "alpha0_floor"
        log.warning("alpha0=%.4g is below the attainable floor; wedge pinned at the admissible edge", alpha0)

    achieved = total(a, b)
    if abs(achieved - alpha) > se_floor(alpha) + 1.0 / cfg.B:
        raise BoundaryError(f"inner wedge calibration did not converge: rate {achieved:.5f}, {diagnostics}")
    out = inner_wedge_boundaries(a, b, delta, j0, r)
    return replace(out, family=family or "inner_wedge", alpha=alpha, alpha0=alpha0, B=cfg.B, seed=cfg.seed,
                   extra={"calibration_mode": mode, "alpha_achieved": achieved,
                          "alpha0_achieved": prefix_rate(b)})


# ---------------------------------------------------------------------------
# Error spending

@dataclass(frozen=True)
class SpendingFunction:
    """Cumulative type I error alpha(t) on information fraction t in [0, 1]."""

    kind: str
    alpha: float = 0.05
    rho: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("obf_like", "pocock_like", "power"):
            raise ValueError(f"unknown spending function {self.kind!r}")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.kind == "power" and not self.rho > 0:
            raise ValueError("rho must be positive")

    def __call__(self, t: float) -> float:
        t = min(max(float(t), 0.0), 1.0)
        if t == 0.0:
            return 0.0
        if self.kind == "obf_like":
            return float(2.0 * norm.sf(norm.isf(self.alpha / 2) / math.sqrt(t)))
        if self.kind == "pocock_like":
            return self.alpha * math.log(1.0 + (math.e - 1.0) * t)
        return self.alpha * t ** self.rho

    @classmethod
    def parse(cls, text: str, alpha: float = 0.05) -> SpendingFunction:
        """'obf', 'pocock' or 'power:RHO'."""
        name, _, arg = text.partition(":")
        name = name.strip().lower()
        if name in ("obf", "obf_like", "obrien_fleming"):
            return cls("obf_like", alpha)
        if name in ("pocock", "pocock_like"):
            return cls("pocock_like", alpha)
        if name == "power":
            return cls("power", alpha, float(arg) if arg else 1.0)
        raise ValueError(f"unknown spending function {text!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha, "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> SpendingFunction:
        return cls(d["kind"], float(d["alpha"]), float(d.get("rho", 1.0)))


def spending_boundary_next(model_prefix: CorrelationModel, prior_b: Sequence[float],
                           spend: SpendingFunction, fractions, cfg: McConfig | None = None) -> float:
    """Boundary for the next look under an error-spending function.

    Solves P(|X_i| < b_i for earlier looks, |X_j| >= b_j) = alpha(r_j) - alpha(r_{j-1})
    by bisection over [0, 10].  Returns ``inf`` when the increment is below
    the Monte Carlo resolution 1/B.
    """
    cfg = cfg or McConfig()
    j = len(prior_b) + 1
    if model_prefix.J != j:
        raise BoundaryError(f"model prefix must be {j}x{j}")
    r = np.asarray(fractions, dtype=float)
    r_prev = 0.0 if j == 1 else r[j - 2]
    increment = spend(r[j - 1]) - spend(r_prev)
    if increment < 0:
        raise BoundaryError("spending function not increasing")
    if increment <= 1.0 / cfg.B:
        return math.inf
    abs_x = np.abs(sample_correlated(model_prefix.sqrt_corr, cfg))
    if j > 1:
        alive = np.all(abs_x[:, :-1] < np.asarray(prior_b, dtype=float), axis=1)
        last = abs_x[alive, -1]
    else:
        last = abs_x[:, 0]

    def prob(bj: float) -> float:
        return float(np.count_nonzero(last >= bj)) / cfg.B

    lo, hi = BRACKET
    if prob(lo) <= increment:
        log.warning("look %d cannot spend its full increment; boundary set to the bracket floor", j)
        return BOUNDARY_TOL
    return _bisect(prob, lo, hi, increment, increasing=False)


def spending_boundaries(model: CorrelationModel, spend: SpendingFunction, fractions=None,
                        cfg: McConfig | None = None) -> np.ndarray:
    """All J spending boundaries computed sequentially from one correlation model."""
    r = _fractions(model.J if fractions is None else fractions)
    out: list[float] = []
    for j in range(1, r.size + 1):
        out.append(spending_boundary_next(model.prefix(j), out, spend, r, cfg))
    return np.array(out)


def spending_plan(spend: SpendingFunction, fractions, cfg: McConfig) -> BoundarySet:
    """Placeholder boundary set for adaptive error-spending monitoring."""
    r = _fractions(fractions)
    return BoundarySet("spending", np.empty(0), r, spend.alpha, B=cfg.B, seed=cfg.seed,
                       extra={"spending": spend.to_dict()})
