"""Synthetic trials and the operating-characteristics harness.

The generator is a latent-normal model in which the treatment effect on the
outcome runs entirely through the surrogate:

    U ~ N(0, latent_sd^2)
    S_ij = 0.5 * j + g * theta * j / J + U + eps_ij,   eps_ij ~ N(0, noise_sd^2)
    Y_i  = 2 + S_iJ + e_i,                              e_i ~ N(0, 1)
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .boundaries import BoundarySet, ShapeFamily, apply_rule, calibrate_efficacy, calibrate_inner_wedge, naive_boundaries
from .data import AnalysisSchedule, StudyADataset, StudyBSnapshot
from .effect import CorrelationModel, EstimationError, build_correlation_model, fit_schedule, w_stat_at
from .kernel import KernelError, KernelSpec
from .mvn import McConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DgpSpec:
    J: int = 8
    n_a0: int = 300
    n_a1: int = 300
    n_b0: int = 400
    n_b1: int = 400
    latent_sd: float = 1.0
    noise_sd: float = 0.5
    theta: float = 0.0
    seed: int = 1

    def __post_init__(self) -> None:
        if self.latent_sd <= 0 or self.noise_sd <= 0:
            raise ValueError("standard deviations must be positive")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if min(self.n_a0, self.n_a1, self.n_b0, self.n_b1) < 2 or self.J < 1:
            raise ValueError("arm sizes must be >= 2 and J >= 1")


def _surrogates(dgp: DgpSpec, group: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    j = np.arange(1, dgp.J + 1)
    u = rng.normal(0.0, dgp.latent_sd, size=(group.size, 1))
    eps = rng.normal(0.0, dgp.noise_sd, size=(group.size, dgp.J))
    return 0.5 * j + group[:, None] * dgp.theta * (j / dgp.J) + u + eps


def generate_study_a(dgp: DgpSpec, rng: np.random.Generator) -> StudyADataset:
    group = np.repeat([0, 1], [dgp.n_a0, dgp.n_a1])
    s = _surrogates(dgp, group, rng)
    y = 2.0 + s[:, -1] + rng.normal(0.0, 1.0, size=group.size)
    ids = np.array([f"A{i:05d}" for i in range(group.size)])
    return StudyADataset(ids, group, y, s, np.arange(1, dgp.J + 1, dtype=float))


def generate_study_b(dgp: DgpSpec, rng: np.random.Generator) -> StudyBSnapshot:
    group = np.repeat([0, 1], [dgp.n_b0, dgp.n_b1])
    s = _surrogates(dgp, group, rng)
    ids = np.array([f"B{i:05d}" for i in range(group.size)])
    return StudyBSnapshot(ids, group, s, np.arange(1, dgp.J + 1, dtype=float))


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([abs(int(k)) for k in key]))


def generate_pair(dgp: DgpSpec, rep_seed: int = 0) -> tuple[StudyADataset, StudyBSnapshot]:
    """Study A from ``dgp.seed`` and a complete Study B for replication ``rep_seed``."""
    return study_a_for(dgp), study_b_for(dgp, rep_seed)


def study_a_for(dgp: DgpSpec, replicate: int | None = None) -> StudyADataset:
    key = (dgp.seed, 0) if replicate is None else (dgp.seed, 2, replicate)
    return generate_study_a(dgp, _rng(*key))


def study_b_for(dgp: DgpSpec, rep_seed: int) -> StudyBSnapshot:
    return generate_study_b(dgp, _rng(dgp.seed, 1, rep_seed))


def design_model(dgp: DgpSpec, study_a: StudyADataset | None = None, kernel: KernelSpec | None = None,
                 support_policy: str = "trim") -> CorrelationModel:
    """Design-time correlation model for the DGP's Study A and planned Study B sizes."""
    a = study_a if study_a is not None else study_a_for(dgp)
    return build_correlation_model(a, None, dgp.n_b0, dgp.n_b1, kernel, support_policy)


# ---------------------------------------------------------------------------
# Procedures

@dataclass(frozen=True)
class Procedure:
    name: str
    boundaries: BoundarySet


EFFICACY_PROCEDURES = ("fixed", "unadjusted", "bonferroni", "pocock", "obf", "wt")
FUTILITY_PROCEDURES = ("pocock_futility", "obf_futility", "wt_futility")
PROCEDURE_NAMES = EFFICACY_PROCEDURES + FUTILITY_PROCEDURES


def build_procedure(name: str, model: CorrelationModel, alpha: float = 0.05, cfg: McConfig | None = None,
                    wt_delta: float = 0.4, j0: int | None = None, alpha0: float | None = None,
                    fractions=None) -> Procedure:
    """One named procedure calibrated on ``model``.

    Names are those in ``PROCEDURE_NAMES``.  ``*_futility`` procedures are
    inner-wedge tests with delta = 1/2 (pocock), 0 (obf) or ``wt_delta``;
    ``j0`` defaults to J/2 and ``alpha0`` to (j0/J) * alpha.
    """
    if name not in PROCEDURE_NAMES:
        raise ValueError(f"unknown procedure {name!r}; choose from {', '.join(PROCEDURE_NAMES)}")
    cfg = cfg or McConfig()
    J = model.J
    r = np.arange(1, J + 1) / J if fractions is None else np.asarray(fractions, float)
    base = name.removesuffix("_futility")
    if base in ("fixed", "unadjusted", "bonferroni"):
        return Procedure(name, naive_boundaries(base, r, alpha))
    fam = ShapeFamily(base, wt_delta if base == "wt" else None)
    if name == base:
        return Procedure(name, calibrate_efficacy(model, fam, alpha, cfg, r))
    j0 = j0 or max(1, J // 2)
    alpha0 = alpha0 if alpha0 is not None else (j0 / J) * alpha
    return Procedure(name, calibrate_inner_wedge(model, fam.delta, j0, alpha, alpha0, cfg, r, family=fam.kind))


def procedure_zoo(model: CorrelationModel, alpha: float = 0.05, cfg: McConfig | None = None,
                  wt_delta: float = 0.4, futility: bool = False, j0: int | None = None,
                  alpha0: float | None = None, fractions=None) -> list[Procedure]:
    """Fixed-sample, naive and calibrated procedures, plus inner-wedge variants with ``futility``."""
    names = PROCEDURE_NAMES if futility else EFFICACY_PROCEDURES
    return [build_procedure(n, model, alpha, cfg, wt_delta, j0, alpha0, fractions) for n in names]


# ---------------------------------------------------------------------------
# Harness

@dataclass(frozen=True)
class OcRow:
    procedure: str
    expected_T: float
    se_T: float
    p_reject: float
    se_p: float
    replications: int
    failures: int = 0


@dataclass
class OperatingCharacteristics:
    rows: list[OcRow]
    stop_times: dict[str, np.ndarray] = field(default_factory=dict)
    rejected: dict[str, np.ndarray] = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    def row(self, name: str) -> OcRow:
        for r in self.rows:
            if r.procedure == name:
                return r
        raise KeyError(name)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["procedure", "E_T", "SE_E_T", "P_reject", "SE_P_reject", "replications", "failures"])
            for r in self.rows:
                w.writerow([r.procedure, f"{r.expected_T:.3f}", f"{r.se_T:.3f}",
                            f"{r.p_reject:.3f}", f"{r.se_p:.3f}", r.replications, r.failures])

    def save_manifest(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest, fh, indent=2)

    def table(self) -> str:
        lines = [f"{'procedure':<22}{'E(T) (SE)':>18}{'P(reject) (SE)':>20}"]
        for r in self.rows:
            lines.append(f"{r.procedure:<22}{r.expected_T:>9.3f} ({r.se_T:.3f})"
                         f"{r.p_reject:>12.3f} ({r.se_p:.3f})")
        return "\n".join(lines)


SUPPORT_POLICIES = ("trim", "error")


def trim_to_support(b: StudyBSnapshot, fits) -> tuple[StudyBSnapshot, int]:
    """Mark Study B values outside the Study A control support of their analysis as missing.

    The borrowed conditional mean is only defined on that support; trimmed
    subjects drop out of the affected analysis only.  Returns the trimmed
    snapshot and the number of values removed.
    """
    s = b.s.copy()
    removed = 0
    for j in range(b.j_obs):
        lo, hi = fits[j].support
        col = s[:, j]
        out = (col < lo) | (col > hi)
        removed += int(out.sum())
        col[out] = np.nan
    return StudyBSnapshot(b.ids, b.group, s, b.schedule_times), removed


def replicate_statistics(a: StudyADataset, dgp: DgpSpec, rep: int, kernel: KernelSpec | None = None,
                         fits=None, support_policy: str = "trim") -> tuple[np.ndarray, int]:
    """W statistics at all J analyses for one Study B replication, and the trimmed count."""
    if support_policy not in SUPPORT_POLICIES:
        raise ValueError(f"support_policy must be one of {SUPPORT_POLICIES}")
    schedule = AnalysisSchedule.equally_spaced(dgp.J)
    fits = fits or fit_schedule(a, schedule, kernel)
    b = study_b_for(dgp, rep)
    removed = 0
    if support_policy == "trim":
        b, removed = trim_to_support(b, fits)
    w = np.array([w_stat_at(fits[j - 1], b, j).w_stat for j in range(1, dgp.J + 1)])
    return w, removed


def run_operating_characteristics(dgp: DgpSpec, procedures: list[Procedure], reps: int = 1000,
                                  study_a: StudyADataset | None = None,
                                  kernel: KernelSpec | None = None, workers: int = 1,
                                  regenerate_a: bool = False,
                                  support_policy: str = "trim") -> OperatingCharacteristics:
    """Estimate E(T) and P(reject) for each procedure over ``reps`` Study B replications.

    Every procedure sees the same replications.  The statistics at all J
    analyses are computed once per replication; a procedure's decision at
    analysis j only reads statistics up to j, so this matches running each
    procedure look by look.  Study A is fixed unless ``regenerate_a``.

    With ``support_policy="trim"`` Study B values outside the Study A
    control support are left out of their analysis (see
    :func:`trim_to_support`); with ``"error"`` such replications fail.
    Failed replications are excluded and counted.
    """
    kernel = kernel or KernelSpec()
    fixed_a = study_a if study_a is not None else study_a_for(dgp)
    schedule = AnalysisSchedule.equally_spaced(dgp.J)
    fixed_fits = None if regenerate_a else fit_schedule(fixed_a, schedule, kernel)

    def one(rep: int) -> tuple[np.ndarray, int] | None:
        try:
            if regenerate_a:
                return replicate_statistics(study_a_for(dgp, rep), dgp, rep, kernel, None, support_policy)
            return replicate_statistics(fixed_a, dgp, rep, kernel, fixed_fits, support_policy)
        except (KernelError, EstimationError) as exc:
            log.warning("replication %d failed: %s", rep, exc)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(reps)))
    else:
        results = [one(r) for r in range(reps)]
    ok = [r for r in results if r is not None]
    failures = reps - len(ok)
    if not ok:
        raise RuntimeError("every replication failed")
    abs_w = np.abs(np.vstack([w for w, _ in ok]))
    trimmed = int(sum(n for _, n in ok))

    rows, stop_times, rejected = [], {}, {}
    for proc in procedures:
        bs = proc.boundaries
        if bs.J != dgp.J:
            raise ValueError(f"procedure {proc.name} has {bs.J} analyses, DGP has {dgp.J}")
        T, rej = apply_rule(abs_w, bs.b, bs.a)
        n = T.size
        p = float(rej.mean())
        se_t = float(T.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        rows.append(OcRow(proc.name, float(T.mean()), se_t, p, math.sqrt(p * (1 - p) / n), n, failures))
        stop_times[proc.name] = T
        rejected[proc.name] = rej
    manifest = {
        "dgp": asdict(dgp),
        "reps": reps,
        "replication_seeds": {"study_a": [dgp.seed, 0], "study_b": f"[{dgp.seed}, 1, rep] for rep in 0..{reps - 1}"},
        "regenerate_a": regenerate_a,
        "support_policy": support_policy,
        "trimmed_values": trimmed,
        "failed_replications": failures,
        "kernel": kernel.to_dict(),
        "procedures": {p.name: p.boundaries.to_dict() for p in procedures},
    }
    return OperatingCharacteristics(rows, stop_times, rejected, manifest)
