"""Nadaraya-Watson estimate of the conditional mean outcome given the surrogate."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .data import DataError, StudyADataset

KernelKind = Literal["gaussian", "epanechnikov"]

_SQRT_2PI = math.sqrt(2.0 * math.pi)
# n^(-1/5) reference rate times n^(-0.11) undersmoothing
_BANDWIDTH_EXPONENT = -0.2 - 0.11
# evaluation is chunked so the (queries x training) weight matrix stays small
_CHUNK = 4096


class KernelError(ValueError):
    """Kernel estimation failure (degenerate data or empty neighbourhood)."""


class NeighborhoodError(KernelError):
    """No training point carries appreciable weight at some query point.

    ``indices`` holds the positions of the offending queries.
    """

    def __init__(self, message: str, indices: np.ndarray | None = None):
        super().__init__(message)
        self.indices = np.asarray([] if indices is None else indices, dtype=int)


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = "gaussian"
    bandwidth: float | Literal["auto"] = "auto"

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "epanechnikov"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.bandwidth != "auto":
            h = float(self.bandwidth)
            if not (h > 0 and math.isfinite(h)):
                raise ValueError("bandwidth must be positive")
            object.__setattr__(self, "bandwidth", h)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth}

    @classmethod
    def from_dict(cls, d: dict) -> KernelSpec:
        return cls(d.get("kind", "gaussian"), d.get("bandwidth", "auto"))


def kernel_density(u: np.ndarray, kind: KernelKind) -> np.ndarray:
    """Standard kernel K(u)."""
    if kind == "gaussian":
        return np.exp(-0.5 * u * u) / _SQRT_2PI
    if kind == "epanechnikov":
        return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)
    raise ValueError(f"unknown kernel {kind!r}")


def auto_bandwidth(s: np.ndarray) -> float:
    """Undersmoothed Silverman reference bandwidth.

    h = 1.06 * min(sd, IQR/1.34) * n^(-1/5) * n^(-0.11), with the sample
    standard deviation (ddof=1).  When the IQR is zero but the sd is not,
    the sd alone is used.
    """
    s = np.asarray(s, dtype=float)
    n = s.size
    if n < 2:
        raise KernelError("need at least two surrogate values for a bandwidth")
    sd = float(np.std(s, ddof=1))
    if not sd > 0:
        raise KernelError("degenerate surrogate distribution")
    q75, q25 = np.percentile(s, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    return 1.06 * spread * n ** _BANDWIDTH_EXPONENT


@dataclass(frozen=True, eq=False)
class FittedConditionalMean:
    """Training pairs and bandwidth for one (arm, surrogate column)."""

    s: np.ndarray
    y: np.ndarray
    bandwidth: float
    kind: KernelKind = "gaussian"

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if s.ndim != 1 or s.shape != y.shape or s.size < 2:
            raise KernelError("training vectors must have equal length >= 2")
        if not self.bandwidth > 0:
            raise KernelError("bandwidth must be positive")
        s.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "y", y)

    @property
    def support(self) -> tuple[float, float]:
        return float(self.s.min()), float(self.s.max())

    @property
    def eps_den(self) -> float:
        return 1e-10 * self.s.size

    def __call__(self, s_query) -> np.ndarray:
        return predict_mu(self, s_query)


def fit_mu(a: StudyADataset, group: int, column: int,
           kernel: KernelSpec | None = None) -> FittedConditionalMean:
    """Fit the arm-``group`` conditional mean at 1-based surrogate ``column``."""
    kernel = kernel or KernelSpec()
    if group not in (0, 1):
        raise DataError("invalid group label")
    if not 1 <= column <= a.n_times:
        raise DataError(f"Study A column {column} out of range 1..{a.n_times}")
    s, y = a.arm(group)
    s = s[:, column - 1]
    h = auto_bandwidth(s) if kernel.bandwidth == "auto" else float(kernel.bandwidth)
    return FittedConditionalMean(s.copy(), y.copy(), h, kernel.kind)


def predict_mu(f: FittedConditionalMean, s_query) -> np.ndarray:
    """Vectorised kernel-weighted average of the training outcomes.

    Raises:
        NeighborhoodError: if the kernel weight sum at some query is below
            ``1e-10 * n``; ``indices`` lists the failing queries.
    """
    q = np.atleast_1d(np.asarray(s_query, dtype=float))
    out = np.empty(q.shape, dtype=float)
    flat_q = q.ravel()
    flat_out = out.ravel()
    bad = []
    h = f.bandwidth
    for start in range(0, flat_q.size, _CHUNK):
        qc = flat_q[start:start + _CHUNK]
        w = kernel_density((f.s[None, :] - qc[:, None]) / h, f.kind) / h
        den = w.sum(axis=1)
        num = w @ f.y
        small = den < f.eps_den
        if np.any(small):
            bad.extend((np.flatnonzero(small) + start).tolist())
            den = np.where(small, 1.0, den)
        flat_out[start:start + qc.size] = num / den
    if bad:
        raise NeighborhoodError(
            f"no effective neighbors at query point(s) {flat_q[bad[:5]].tolist()}"
            f"{' ...' if len(bad) > 5 else ''}", np.asarray(bad))
    return flat_out.reshape(q.shape)


def evaluate_mu(f: FittedConditionalMean, s_query: float) -> float:
    """Conditional mean estimate at a single surrogate value."""
    return float(predict_mu(f, [s_query])[0])
