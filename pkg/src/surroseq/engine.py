"""Look-by-look monitoring state machine."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

from .boundaries import BoundarySet, SpendingFunction, spending_boundary_next
from .data import AnalysisSchedule, StudyADataset, StudyBSnapshot
from .effect import EffectEstimate, correlation_from_study_b, fit_schedule, w_stat_at
from .kernel import FittedConditionalMean, KernelSpec
from .mvn import McConfig

STATE_VERSION = 1

ACTIVE = "active"
REJECTED = "rejected"
FUTILITY = "futility"
FAILED_TO_REJECT = "failed_to_reject"
TERMINAL = (REJECTED, FUTILITY, FAILED_TO_REJECT)


class MonitoringError(RuntimeError):
    """Analysis submitted out of order or after a terminal decision."""


@dataclass(frozen=True)
class AnalysisRecord:
    j: int
    t: float
    n_b0: int
    n_b1: int
    delta_e: float
    var_hat: float
    w_stat: float
    b: float
    a: float | None
    decision: str

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["b"] = None if not math.isfinite(self.b) else self.b
        return d

    @classmethod
    def from_dict(cls, d: dict) -> AnalysisRecord:
        d = dict(d)
        d["b"] = math.inf if d["b"] is None else float(d["b"])
        return cls(**d)


@dataclass(frozen=True)
class MonitoringState:
    """Immutable record of completed analyses and the current status."""

    boundaries: BoundarySet
    history: tuple[AnalysisRecord, ...] = ()
    status: str = ACTIVE
    stopped_at: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return self.boundaries.J

    @property
    def next_j(self) -> int:
        return len(self.history) + 1

    @property
    def terminal(self) -> bool:
        return self.status != ACTIVE

    @property
    def verdict(self) -> str:
        return self.status if self.stopped_at is None else f"{self.status}({self.stopped_at})"

    def to_dict(self) -> dict:
        return {
            "version": STATE_VERSION,
            "status": self.status,
            "stopped_at": self.stopped_at,
            "boundaries": self.boundaries.to_dict(),
            "history": [h.to_dict() for h in self.history],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> MonitoringState:
        if d.get("version") != STATE_VERSION:
            raise MonitoringError(f"unsupported state version {d.get('version')!r}")
        return cls(BoundarySet.from_dict(d["boundaries"]),
                   tuple(AnalysisRecord.from_dict(h) for h in d["history"]),
                   d["status"], d.get("stopped_at"), dict(d.get("meta", {})))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> MonitoringState:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def new_state(boundaries: BoundarySet, **meta) -> MonitoringState:
    return MonitoringState(boundaries, meta=meta)


def evaluate_analysis(state: MonitoringState, est: EffectEstimate, b_j: float | None = None,
                      t: float | None = None) -> MonitoringState:
    """Apply the stopping rule at the next analysis and return the new state.

    ``b_j`` overrides the stored efficacy boundary; it is required for
    error-spending plans, whose boundaries are computed at each look.
    """
    if state.terminal:
        raise MonitoringError(f"monitoring already ended: {state.verdict}")
    j = est.j
    if j <= len(state.history):
        raise MonitoringError(f"analysis already recorded: {j}")
    if j != state.next_j:
        raise MonitoringError(f"expected analysis {state.next_j}, got {j}")
    bs = state.boundaries
    if j > bs.J:
        raise MonitoringError(f"analysis {j} beyond the planned {bs.J}")
    if b_j is None:
        if bs.family == "spending":
            raise MonitoringError("spending plans need the look's boundary")
        b_j = float(bs.b[j - 1])
    a_j = float(bs.a[j - 1]) if bs.a is not None else None

    w = abs(est.w_stat)
    if w >= b_j:
        decision, status = "reject", REJECTED
    elif a_j is not None and w < a_j:
        decision, status = "futility", FUTILITY
    elif j == bs.J:
        decision, status = "fail_to_reject", FAILED_TO_REJECT
    else:
        decision, status = "continue", ACTIVE
    rec = AnalysisRecord(j, float(bs.fractions[j - 1] if t is None else t), est.n_b0, est.n_b1,
                         est.delta_e, est.var_hat, est.w_stat, float(b_j), a_j, decision)
    return replace(state, history=state.history + (rec,), status=status,
                   stopped_at=None if status == ACTIVE else j)


def run_full(a: StudyADataset, b_stream: Iterable[StudyBSnapshot], boundaries: BoundarySet,
             schedule: AnalysisSchedule | None = None, kernel: KernelSpec | None = None,
             state: MonitoringState | None = None) -> MonitoringState:
    """Drive monitoring over successive snapshots until a terminal decision.

    Snapshot ``k`` (in iteration order) is used for the analysis following
    those already in ``state``; snapshots after the terminal analysis are
    never read.  Error-spending plans are not supported here (see
    :func:`monitor_look`).
    """
    if boundaries.family == "spending":
        raise MonitoringError("run_full needs precomputed boundaries")
    schedule = schedule or AnalysisSchedule.equally_spaced(boundaries.J)
    fits = fit_schedule(a, schedule, kernel)
    state = state or new_state(boundaries)
    if state.terminal:
        return state
    for snapshot in b_stream:
        j = state.next_j
        est = w_stat_at(fits[j - 1], snapshot, j)
        state = evaluate_analysis(state, est, t=schedule.analysis_times[j - 1])
        if state.terminal:
            break
    return state


def monitor_look(state: MonitoringState, fits: list[FittedConditionalMean], snapshot: StudyBSnapshot,
                 schedule: AnalysisSchedule, cfg: McConfig | None = None) -> MonitoringState:
    """One monitoring step for the next analysis, including spending plans.

    For a spending plan the look's boundary is computed from the correlation
    of the first j statistics estimated on the Study B snapshot, given the
    boundaries already used at earlier looks.
    """
    if state.terminal:
        raise MonitoringError(f"monitoring already ended: {state.verdict}")
    j = state.next_j
    if snapshot.j_obs < j:
        raise MonitoringError(f"snapshot holds {snapshot.j_obs} analyses; analysis {j} is due")
    est = w_stat_at(fits[j - 1], snapshot, j)
    b_j = None
    bs = state.boundaries
    if bs.family == "spending":
        spend = SpendingFunction.from_dict(bs.extra["spending"])
        cfg = cfg or McConfig(bs.B or 1_000_000, bs.seed if bs.seed is not None else McConfig.seed)
        prefix = correlation_from_study_b(fits, snapshot.truncated(j), j)
        prior = [h.b for h in state.history]
        b_j = spending_boundary_next(prefix, prior, spend, bs.fractions, cfg)
    return evaluate_analysis(state, est, b_j=b_j, t=schedule.analysis_times[j - 1])
