"""Study containers, CSV ingestion and structural validation.

Study A is the completed reference trial (outcome plus repeated surrogate);
Study B is the ongoing trial where only the surrogate is observed.  Group
labels are fixed to 0 (control) and 1 (treatment).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised for malformed or structurally invalid study data."""


def _check_times(times: np.ndarray, what: str) -> None:
    if times.ndim != 1 or times.size == 0:
        raise DataError(f"{what} must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(times)):
        raise DataError(f"{what} must be finite")
    if np.any(np.diff(times) <= 0):
        raise DataError(f"{what} must be strictly increasing")


@dataclass(frozen=True, eq=False)
class StudyADataset:
    """Complete-case Study A data.

    Attributes:
        ids: subject identifiers, shape (n,).
        group: 0/1 arm labels, shape (n,).
        y: primary outcome, shape (n,).
        s: surrogate values, shape (n, J).
        schedule_times: measurement times of the J surrogate columns.
        n_dropped: rows removed at ingestion for missing values.
    """

    ids: np.ndarray
    group: np.ndarray
    y: np.ndarray
    s: np.ndarray
    schedule_times: np.ndarray
    n_dropped: int = 0

    def __post_init__(self) -> None:
        group = np.asarray(self.group, dtype=np.int64)
        y = np.asarray(self.y, dtype=float)
        s = np.atleast_2d(np.asarray(self.s, dtype=float))
        times = np.asarray(self.schedule_times, dtype=float)
        ids = np.asarray(self.ids).astype(str)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "schedule_times", times)
        object.__setattr__(self, "ids", ids)

        n = group.shape[0]
        if y.shape != (n,) or s.shape[0] != n or ids.shape != (n,):
            raise DataError("ids, group, y and s must have matching row counts")
        if not np.all(np.isin(group, (0, 1))):
            raise DataError("invalid group label")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(s))):
            raise DataError("Study A must contain complete cases only")
        _check_times(times, "schedule_times")
        if times.size != s.shape[1]:
            raise DataError("schedule_times length must equal the number of surrogate columns")
        for g, label in ((0, "control"), (1, "treatment")):
            if not np.any(group == g):
                raise DataError(f"empty {label} arm")
        if np.any(y < 0):
            log.warning("Study A has negative outcomes; the method assumes Y >= 0 without loss of generality")

    @property
    def n_times(self) -> int:
        return self.s.shape[1]

    @property
    def n0(self) -> int:
        return int(np.sum(self.group == 0))

    @property
    def n1(self) -> int:
        return int(np.sum(self.group == 1))

    def arm(self, g: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (surrogates, outcomes) of one arm."""
        mask = self.group == g
        return self.s[mask], self.y[mask]

    def sorted_by_id(self) -> StudyADataset:
        order = np.argsort(self.ids, kind="stable")
        return StudyADataset(self.ids[order], self.group[order], self.y[order],
                             self.s[order], self.schedule_times, self.n_dropped)

    def equals(self, other: StudyADataset) -> bool:
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.group, other.group)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.s, other.s)
            and np.array_equal(self.schedule_times, other.schedule_times)
        )


@dataclass(frozen=True, eq=False)
class StudyBSnapshot:
    """Study B surrogate data observed through analysis ``j_obs``.

    Missing surrogate values are kept as NaN: a subject missing ``s_j`` is
    left out of analysis ``j`` only.  There is deliberately no outcome field.
    """

    ids: np.ndarray
    group: np.ndarray
    s: np.ndarray
    schedule_times: np.ndarray | None = None

    def __post_init__(self) -> None:
        group = np.asarray(self.group, dtype=np.int64)
        s = np.asarray(self.s, dtype=float)
        if s.ndim == 1:
            s = s[:, None]
        ids = np.asarray(self.ids).astype(str)
        object.__setattr__(self, "group", group)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "ids", ids)
        if self.schedule_times is not None:
            times = np.asarray(self.schedule_times, dtype=float)
            _check_times(times, "schedule_times")
            object.__setattr__(self, "schedule_times", times)

        n = group.shape[0]
        if s.shape[0] != n or ids.shape != (n,):
            raise DataError("ids, group and s must have matching row counts")
        if not np.all(np.isin(group, (0, 1))):
            raise DataError("invalid group label")
        if np.any(np.isinf(s)):
            raise DataError("surrogate values must be finite or missing")
        _require_both_arms(group, s[:, -1])

    @property
    def j_obs(self) -> int:
        return self.s.shape[1]

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Complete cases of analysis ``j`` (1-based): (ids, group, s_j)."""
        if not 1 <= j <= self.j_obs:
            raise DataError(f"analysis column missing: s_{j}")
        col = self.s[:, j - 1]
        keep = ~np.isnan(col)
        return self.ids[keep], self.group[keep], col[keep]

    def arm_values(self, j: int, g: int) -> np.ndarray:
        _, group, col = self.column(j)
        return col[group == g]

    def truncated(self, j: int) -> StudyBSnapshot:
        """The snapshot as it looked at analysis ``j``."""
        if not 1 <= j <= self.j_obs:
            raise DataError(f"analysis column missing: s_{j}")
        times = None if self.schedule_times is None else self.schedule_times[:j]
        return StudyBSnapshot(self.ids, self.group, self.s[:, :j], times)

    def swapped_groups(self) -> StudyBSnapshot:
        return StudyBSnapshot(self.ids, 1 - self.group, self.s, self.schedule_times)

    def sorted_by_id(self) -> StudyBSnapshot:
        order = np.argsort(self.ids, kind="stable")
        return StudyBSnapshot(self.ids[order], self.group[order], self.s[order], self.schedule_times)

    def equals(self, other: StudyBSnapshot) -> bool:
        return (
            np.array_equal(self.ids, other.ids)
            and np.array_equal(self.group, other.group)
            and np.array_equal(self.s, other.s, equal_nan=True)
        )


def _require_both_arms(group: np.ndarray, col: np.ndarray) -> None:
    present = ~np.isnan(col)
    if not np.any(present & (group == 0)):
        raise DataError("empty control arm")
    if not np.any(present & (group == 1)):
        raise DataError("empty treatment arm")


@dataclass(frozen=True)
class AnalysisSchedule:
    """Study B analysis plan.

    Attributes:
        analysis_times: calendar times of the Study B analyses.
        studyA_column_map: 1-based Study A surrogate column borrowed at each analysis.
        j0: first analysis at which futility stopping is allowed, or None.
    """

    analysis_times: tuple[float, ...]
    studyA_column_map: tuple[int, ...]
    j0: int | None = None

    def __post_init__(self) -> None:
        times = np.asarray(self.analysis_times, dtype=float)
        _check_times(times, "analysis_times")
        object.__setattr__(self, "analysis_times", tuple(float(t) for t in times))
        object.__setattr__(self, "studyA_column_map", tuple(int(c) for c in self.studyA_column_map))
        if len(self.studyA_column_map) != times.size:
            raise DataError("studyA_column_map must have one entry per analysis")
        if any(c < 1 for c in self.studyA_column_map):
            raise DataError("studyA_column_map entries are 1-based")
        if self.j0 is not None and not 1 <= self.j0 <= times.size:
            raise DataError("j0 must lie in [1, J]")

    @classmethod
    def equally_spaced(cls, n_analyses: int, j0: int | None = None) -> AnalysisSchedule:
        return cls(tuple(range(1, n_analyses + 1)), tuple(range(1, n_analyses + 1)), j0)

    @property
    def n_analyses(self) -> int:
        return len(self.analysis_times)

    @property
    def fractions(self) -> np.ndarray:
        times = np.asarray(self.analysis_times)
        return times / times[-1]

    def validate_against(self, a: StudyADataset) -> None:
        if max(self.studyA_column_map) > a.n_times:
            raise DataError(
                f"studyA_column_map refers to column {max(self.studyA_column_map)} "
                f"but Study A has {a.n_times}"
            )


# ---------------------------------------------------------------------------
# CSV ingestion

def _parse_float(cell: str | None) -> float:
    if cell is None:
        return math.nan
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        return float(cell)
    except ValueError as exc:
        raise DataError(f"malformed numeric cell {cell!r}") from exc


def _parse_group(cell: str | None, row_no: int) -> int:
    value = _parse_float(cell)
    if value not in (0.0, 1.0):
        raise DataError(f"invalid group label {cell!r} on data row {row_no}")
    return int(value)


def _read_rows(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames
            if not header:
                raise DataError(f"{path}: header row required")
            header = [h.strip() for h in header]
            reader.fieldnames = header
            rows = list(reader)
    except csv.Error as exc:
        raise DataError(f"{path}: malformed CSV ({exc})") from exc
    for r in rows:
        if None in r:
            raise DataError(f"{path}: malformed CSV (row with too many fields)")
    return header, rows


def _surrogate_columns(header: Sequence[str], prefix: str) -> list[int]:
    idx = []
    for name in header:
        if name.startswith(prefix):
            tail = name[len(prefix):]
            if tail.isdigit():
                idx.append(int(tail))
    idx.sort()
    if not idx:
        raise DataError(f"no surrogate columns with prefix {prefix!r}")
    if idx != list(range(1, len(idx) + 1)):
        raise DataError("surrogate columns must be numbered contiguously from 1")
    return idx


def load_study_a(path: str | Path, times: Sequence[float] | None = None,
                 prefix: str = "s_") -> StudyADataset:
    """Read a Study A CSV with columns ``id,group,y,s_1..s_J``.

    Rows with a missing outcome or any missing surrogate are dropped; the
    count is kept in ``n_dropped``.  ``times`` defaults to ``1..J``.
    """
    header, rows = _read_rows(path)
    for required in ("id", "group", "y"):
        if required not in header:
            raise DataError(f"{path}: missing required column {required!r}")
    cols = _surrogate_columns(header, prefix)
    ids, groups, ys, ss = [], [], [], []
    dropped = 0
    for k, row in enumerate(rows, start=1):
        g = _parse_group(row["group"], k)
        y = _parse_float(row["y"])
        s = [_parse_float(row[f"{prefix}{c}"]) for c in cols]
        if math.isnan(y) or any(math.isnan(v) for v in s):
            dropped += 1
            continue
        ids.append(row["id"].strip())
        groups.append(g)
        ys.append(y)
        ss.append(s)
    if dropped:
        log.info("%s: dropped %d incomplete rows", path, dropped)
    if times is None:
        times = np.arange(1, len(cols) + 1, dtype=float)
    if not ids:
        raise DataError("empty control arm")
    return StudyADataset(np.array(ids), np.array(groups), np.array(ys),
                         np.array(ss, dtype=float).reshape(len(ids), len(cols)),
                         np.asarray(times, dtype=float), dropped)


def load_study_b(path: str | Path, j_obs: int, times: Sequence[float] | None = None,
                 prefix: str = "s_") -> StudyBSnapshot:
    """Read the first ``j_obs`` surrogate columns of a Study B CSV.

    Later columns may be absent or empty.  Subjects whose value at some
    analysis is missing are kept (NaN) and skipped for that analysis only.
    """
    if j_obs < 1:
        raise DataError("j_obs must be >= 1")
    header, rows = _read_rows(path)
    for required in ("id", "group"):
        if required not in header:
            raise DataError(f"{path}: missing required column {required!r}")
    if "y" in header:
        log.warning("%s: ignoring outcome column 'y' in Study B", path)
    available = _surrogate_columns(header, prefix)
    if j_obs > len(available):
        raise DataError(f"analysis column missing: {prefix}{j_obs}")
    ids, groups, ss = [], [], []
    for k, row in enumerate(rows, start=1):
        g = _parse_group(row["group"], k)
        s = [_parse_float(row[f"{prefix}{c}"]) for c in range(1, j_obs + 1)]
        if all(math.isnan(v) for v in s):
            continue
        ids.append(row["id"].strip())
        groups.append(g)
        ss.append(s)
    if not ids:
        raise DataError("empty control arm")
    if times is not None:
        times = np.asarray(times, dtype=float)[:j_obs]
    return StudyBSnapshot(np.array(ids), np.array(groups),
                          np.array(ss, dtype=float).reshape(len(ids), j_obs), times)


def observed_columns(path: str | Path, prefix: str = "s_") -> int:
    """Number of leading surrogate columns that hold at least one value."""
    header, rows = _read_rows(path)
    cols = _surrogate_columns(header, prefix)
    last = 0
    for c in cols:
        if any((row.get(f"{prefix}{c}") or "").strip() for row in rows):
            last = c
        else:
            break
    return last


def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_study_a(a: StudyADataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "group", "y"] + [f"s_{j}" for j in range(1, a.n_times + 1)])
        for i in range(len(a.ids)):
            w.writerow([a.ids[i], int(a.group[i]), _fmt(a.y[i])] + [_fmt(v) for v in a.s[i]])


def write_study_b(b: StudyBSnapshot, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "group"] + [f"s_{j}" for j in range(1, b.j_obs + 1)])
        for i in range(len(b.ids)):
            w.writerow([b.ids[i], int(b.group[i])] + [_fmt(v) for v in b.s[i]])


# ---------------------------------------------------------------------------
# Support check (assumption C5)

@dataclass(frozen=True)
class SupportEntry:
    analysis: int
    studyA_column: int
    support: tuple[float, float]
    n_outside: int
    n_total: int
    fraction_outside: float
    status: str


@dataclass(frozen=True)
class SupportReport:
    tolerance: float
    entries: list[SupportEntry] = field(default_factory=list)

    @property
    def status(self) -> str:
        statuses = {e.status for e in self.entries}
        for s in ("fail", "warn"):
            if s in statuses:
                return s
        return "pass"


def check_support_c5(a: StudyADataset, b: StudyBSnapshot, col_map: Sequence[int] | None = None,
                     tolerance: float = 0.0) -> SupportReport:
    """Fraction of Study B surrogates outside the Study A control-arm range.

    The support is the closed interval [min, max] of the mapped Study A
    control column.  Status is ``fail`` above ``tolerance``, ``warn`` for a
    nonzero fraction within tolerance, otherwise ``pass``.
    """
    if col_map is None:
        col_map = list(range(1, b.j_obs + 1))
    s0, _ = a.arm(0)
    entries = []
    for j in range(1, b.j_obs + 1):
        col = col_map[j - 1]
        if not 1 <= col <= a.n_times:
            raise DataError(f"Study A column {col} out of range")
        ref = s0[:, col - 1]
        lo, hi = float(ref.min()), float(ref.max())
        _, _, vals = b.column(j)
        outside = int(np.sum((vals < lo) | (vals > hi)))
        frac = outside / vals.size
        if frac > tolerance:
            status = "fail"
        elif frac > 0:
            status = "warn"
        else:
            status = "pass"
        entries.append(SupportEntry(j, col, (lo, hi), outside, int(vals.size), frac, status))
    return SupportReport(tolerance, entries)
