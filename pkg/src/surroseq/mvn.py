"""Seeded multivariate-normal Monte Carlo.

Draws are generated in fixed-size blocks; block ``k`` comes from a Philox
counter-based generator keyed by ``(seed, k)``.  The draw set is therefore a
pure function of ``(seed, B, J)`` and does not depend on how many workers
produce the blocks.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

BLOCK_SIZE = 1 << 16
MIN_DRAWS = 1000
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class McConfig:
    B: int = 1_000_000
    seed: int = 20240101
    workers: int = 1

    def __post_init__(self) -> None:
        if self.B < MIN_DRAWS:
            raise ValueError(f"B must be at least {MIN_DRAWS} for calibration")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)

    @classmethod
    def from_env(cls, B: int = 1_000_000, seed: int | None = None, workers: int = 1) -> McConfig:
        if seed is None:
            seed = int(os.environ.get("SURROSEQ_SEED", cls.seed))
        return cls(B, seed, workers)


def _block_normals(seed: int, block: int, n: int, J: int) -> np.ndarray:
    bitgen = np.random.Philox(key=np.array([seed, block], dtype=np.uint64))
    return np.random.Generator(bitgen).standard_normal((n, J))


def standard_normals(J: int, cfg: McConfig) -> np.ndarray:
    """B x J iid standard normals, reproducible for any worker count."""
    n_blocks = -(-cfg.B // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, cfg.B - k * BLOCK_SIZE) for k in range(n_blocks)]
    out = np.empty((cfg.B, J))

    def fill(k: int) -> None:
        lo = k * BLOCK_SIZE
        out[lo:lo + sizes[k]] = _block_normals(cfg.seed, k, sizes[k], J)

    if cfg.workers == 1 or n_blocks == 1:
        for k in range(n_blocks):
            fill(k)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(fill, range(n_blocks)))
    return out


def sample_correlated(sqrt_corr: np.ndarray, cfg: McConfig) -> np.ndarray:
    """Draws X = R Z with Z iid N(0, I); returns an array of shape (B, J)."""
    sqrt_corr = np.atleast_2d(np.asarray(sqrt_corr, dtype=float))
    if sqrt_corr.shape[0] != sqrt_corr.shape[1]:
        raise ValueError("sqrt_corr must be square")
    z = standard_normals(sqrt_corr.shape[0], cfg)
    return z @ sqrt_corr.T


def upper_alpha_quantile(values: np.ndarray, alpha: float) -> float:
    """The ceil((1 - alpha) * B)-th smallest value (1-based)."""
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0:
        raise ValueError("empty sample")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    # guard against (1 - alpha) * B landing a hair above an integer
    k = math.ceil((1.0 - alpha) * values.size - 1e-9)
    k = min(max(k, 1), values.size)
    return float(np.partition(values, k - 1)[k - 1])


@dataclass(frozen=True)
class McEstimate:
    p: float
    se: float
    B: int


def indicator_mean(hits: np.ndarray) -> McEstimate:
    hits = np.asarray(hits, dtype=bool)
    p = float(hits.mean())
    return McEstimate(p, math.sqrt(p * (1.0 - p) / hits.size), hits.size)


def event_probability(sqrt_corr: np.ndarray, predicate: Callable[[np.ndarray], np.ndarray],
                      cfg: McConfig) -> McEstimate:
    """Monte Carlo probability of ``predicate``.

    ``predicate`` receives the (B, J) draw matrix and returns a boolean
    vector of length B.
    """
    return indicator_mean(predicate(sample_correlated(sqrt_corr, cfg)))
