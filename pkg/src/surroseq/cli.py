"""Command line interface: design, monitor, simulate, diagnose.

Exit codes: 0 success / continue monitoring, 10 reject, 11 futility stop,
12 failed to reject at the final analysis, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .boundaries import (FAMILY_ALIASES, BoundaryError, BoundarySet, ShapeFamily, SpendingFunction,
                         calibrate_efficacy, calibrate_inner_wedge, naive_boundaries, spending_plan)
from .data import AnalysisSchedule, DataError, load_study_a, load_study_b, observed_columns
from .diagnostics import diagnose, write_curves
from .effect import EstimationError, build_correlation_model, fit_schedule
from .engine import (FAILED_TO_REJECT, FUTILITY, REJECTED, MonitoringError, MonitoringState,
                     monitor_look, new_state)
from .kernel import KernelError, KernelSpec
from .mvn import McConfig
from .simulation import (PROCEDURE_NAMES, DgpSpec, build_procedure, design_model,
                         run_operating_characteristics, study_a_for)

EXIT_OK = 0
EXIT_REJECT = 10
EXIT_FUTILITY = 11
EXIT_FAIL_TO_REJECT = 12
EXIT_ERROR = 2

_STATUS_EXIT = {REJECTED: EXIT_REJECT, FUTILITY: EXIT_FUTILITY, FAILED_TO_REJECT: EXIT_FAIL_TO_REJECT}


class UsageError(ValueError):
    """Inconsistent command line options."""


def _floats(text: str | None) -> list[float] | None:
    return None if text is None else [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str | None) -> list[int] | None:
    return None if text is None else [int(v) for v in text.split(",") if v.strip()]


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("SURROSEQ_SEED", McConfig.seed))


def _mc(args) -> McConfig:
    return McConfig(args.B, _seed(args), args.workers)


def _kernel(args) -> KernelSpec:
    return KernelSpec(args.kernel, "auto" if args.bandwidth is None else args.bandwidth)


def _write_json(obj, path: str | None) -> None:
    text = json.dumps(obj, indent=2)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# design

def _schedule(args, n_columns: int | None) -> AnalysisSchedule:
    times = _floats(args.times)
    col_map = _ints(args.a_col_map)
    if times is None:
        n = len(col_map) if col_map is not None else (args.J or n_columns)
        if n is None:
            raise UsageError("give --times, --J or --study-a to fix the number of analyses")
        times = list(range(1, n + 1))
    if col_map is None:
        if n_columns is not None and len(times) > n_columns:
            raise UsageError("more analyses than Study A columns; give --a-col-map")
        col_map = list(range(1, len(times) + 1))
    return AnalysisSchedule(tuple(times), tuple(col_map), args.j0)


def cmd_design(args) -> int:
    family = FAMILY_ALIASES.get(args.family.lower())
    if family is None:
        raise UsageError(f"unknown family {args.family!r}")
    if args.futility and args.j0 is None:
        raise UsageError("--futility requires --j0")
    if args.futility and args.spending:
        raise UsageError("--futility and --spending cannot be combined")
    a = load_study_a(args.study_a) if args.study_a else None
    schedule = _schedule(args, a.n_times if a is not None else None)
    r = schedule.fractions
    kernel = _kernel(args)
    cfg = _mc(args)
    naive = family in ("unadjusted", "bonferroni", "fixed")

    if args.spending:
        bs = spending_plan(SpendingFunction.parse(args.spending, args.alpha), r, cfg)
    elif naive and not args.futility:
        bs = naive_boundaries(family, r, args.alpha)
    else:
        if a is None:
            raise UsageError(f"family {family} needs --study-a to estimate the correlation")
        if args.n_b0 is None or args.n_b1 is None:
            raise UsageError("calibrated families need --n-b0 and --n-b1")
        schedule.validate_against(a)
        model = build_correlation_model(a, schedule, args.n_b0, args.n_b1, kernel, args.support_policy)
        if args.futility:
            fam = ShapeFamily(family, args.delta if family == "wang_tsiatis" else None)
            alpha0 = args.alpha0 if args.alpha0 is not None else schedule.j0 / len(r) * args.alpha
            bs = calibrate_inner_wedge(model, fam.delta, schedule.j0, args.alpha, alpha0, cfg, r,
                                       family=fam.kind)
        else:
            fam = ShapeFamily(family, args.delta if family == "wang_tsiatis" else None)
            bs = calibrate_efficacy(model, fam, args.alpha, cfg, r)
        bs = bs.with_extra(correlation=model.to_dict())
    bs = bs.with_extra(schedule={"analysis_times": list(schedule.analysis_times),
                                 "studyA_column_map": list(schedule.studyA_column_map),
                                 "j0": schedule.j0},
                       kernel=kernel.to_dict())
    d = bs.to_dict()
    _write_json(d, args.out)
    if args.out is not None:
        print(_describe(bs))
    return EXIT_OK


def _describe(bs: BoundarySet) -> str:
    lines = [f"family {bs.family}, alpha {bs.alpha:g}, J = {bs.J}"]
    if bs.family == "spending":
        lines.append("boundaries are computed at each look from the spending function")
        return "\n".join(lines)
    for j in range(bs.J):
        a = "" if bs.a is None else f"  a_{j + 1} = {bs.a[j]:.4f}"
        lines.append(f"  t = {bs.fractions[j]:.3f}  b_{j + 1} = {bs.b[j]:.4f}{a}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# monitor

def _stored_schedule(bs: BoundarySet) -> AnalysisSchedule:
    sch = bs.extra.get("schedule")
    if sch is None:
        return AnalysisSchedule.equally_spaced(bs.J, bs.j0)
    return AnalysisSchedule(tuple(sch["analysis_times"]), tuple(sch["studyA_column_map"]), sch.get("j0"))


def cmd_monitor(args) -> int:
    state_path = Path(args.state)
    if state_path.exists():
        state = MonitoringState.load(state_path)
    else:
        if not args.boundaries:
            raise UsageError("--boundaries is required for the first analysis")
        state = new_state(BoundarySet.load(args.boundaries))
    if state.terminal:
        raise MonitoringError(f"monitoring already ended: {state.verdict}")
    bs = state.boundaries
    schedule = _stored_schedule(bs)
    kernel = KernelSpec.from_dict(bs.extra.get("kernel", {}))

    j_obs = observed_columns(args.study_b)
    if j_obs < 1:
        raise DataError("analysis column missing: s_1")
    if j_obs < state.next_j:
        raise MonitoringError(f"analysis already recorded: {j_obs}")
    if j_obs > state.next_j:
        raise MonitoringError(f"expected analysis {state.next_j}, snapshot holds {j_obs}")
    if j_obs > bs.J:
        raise MonitoringError(f"analysis {j_obs} beyond the planned {bs.J}")

    a = load_study_a(args.study_a)
    snapshot = load_study_b(args.study_b, j_obs, schedule.analysis_times)
    fits = fit_schedule(a, schedule, kernel)
    cfg = McConfig(args.B or bs.B or 1_000_000,
                   args.seed if args.seed is not None else (bs.seed if bs.seed is not None else _seed(args)),
                   args.workers)
    state = monitor_look(state, fits, snapshot, schedule, cfg)
    state.save(state_path)

    rec = state.history[-1]
    decision = {"analysis": rec.j, "decision": rec.decision, "status": state.status,
                "record": rec.to_dict()}
    _write_json(decision, args.out)
    if args.out is not None:
        a_txt = "" if rec.a is None else f", a = {rec.a:.4f}"
        print(f"analysis {rec.j}: W = {rec.w_stat:.4f}, b = {rec.b:.4f}{a_txt} -> {rec.decision}")
    if args.plot_data:
        _write_look_table(state, args.plot_data)
    return _STATUS_EXIT.get(state.status, EXIT_OK)


def _write_look_table(state: MonitoringState, path: str) -> None:
    """Per-look statistic and boundaries, ready for plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["analysis", "t", "w_stat", "b", "a", "decision"])
        for h in state.history:
            w.writerow([h.j, h.t, h.w_stat, h.b, "" if h.a is None else h.a, h.decision])


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    names = [n.strip() for n in args.procedures.split(",") if n.strip()]
    unknown = [n for n in names if n not in PROCEDURE_NAMES]
    if unknown:
        raise UsageError(f"unknown procedure(s) {', '.join(unknown)}; choose from {', '.join(PROCEDURE_NAMES)}")
    seed = _seed(args)
    dgp = DgpSpec(J=args.J, n_a0=args.n_a0, n_a1=args.n_a1, n_b0=args.n_b0 or 400,
                  n_b1=args.n_b1 or 400, theta=args.theta, seed=seed)
    kernel = _kernel(args)
    cfg = McConfig(args.B, seed, args.workers)
    a = study_a_for(dgp)
    model = design_model(dgp, a, kernel, args.support_policy)
    j0 = args.j0 or max(1, dgp.J // 2)
    procs = [build_procedure(n, model, args.alpha, cfg, args.delta, j0, args.alpha0) for n in names]
    oc = run_operating_characteristics(dgp, procs, args.reps, a, kernel, args.workers,
                                       args.regenerate_a, args.support_policy)
    oc.manifest.update({"calibration": {"B": cfg.B, "seed": cfg.seed}, "alpha": args.alpha})
    out = Path(args.out)
    oc.to_csv(out)
    oc.save_manifest(args.manifest or out.with_suffix(".manifest.json"))
    print(oc.table())
    return EXIT_OK


# ---------------------------------------------------------------------------
# diagnose

def cmd_diagnose(args) -> int:
    a = load_study_a(args.study_a)
    b = None
    if args.study_b:
        b = load_study_b(args.study_b, observed_columns(args.study_b))
    report, curves = diagnose(a, b, _ints(args.a_col_map), _kernel(args), args.grid_size,
                              args.support_tolerance)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    write_curves(curves, out / "curves.csv")
    for r in report.results:
        v = "nan" if r.value is None or not np.isfinite(r.value) else f"{r.value:.4f}"
        print(f"analysis {r.analysis} {r.check:<5} {r.status:<9} {v}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--B", type=int, default=1_000_000, help="Monte Carlo draws")
    p.add_argument("--seed", type=int, default=None, help="RNG seed (fallback: SURROSEQ_SEED)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--kernel", choices=("gaussian", "epanechnikov"), default="gaussian")
    p.add_argument("--bandwidth", type=float, default=None, help="fixed bandwidth instead of the automatic rule")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surroseq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="calibrate stopping boundaries")
    d.add_argument("--study-a")
    d.add_argument("--n-b0", type=int)
    d.add_argument("--n-b1", type=int)
    d.add_argument("--times", help="comma-separated analysis times")
    d.add_argument("--J", type=int, help="number of equally spaced analyses")
    d.add_argument("--a-col-map", help="comma-separated 1-based Study A column per analysis")
    d.add_argument("--alpha", type=float, default=0.05)
    d.add_argument("--family", default="wt", help="pocock | obf | wt | bonferroni | unadjusted | fixed")
    d.add_argument("--delta", type=float, default=0.4)
    d.add_argument("--futility", action="store_true")
    d.add_argument("--j0", type=int)
    d.add_argument("--alpha0", type=float)
    d.add_argument("--spending", help="obf | pocock | power:RHO")
    d.add_argument("--support-policy", choices=("error", "trim"), default="error",
                   help="treated Study A subjects outside the control support: fail, or leave them "
                        "out of the covariance estimate")
    d.add_argument("--out")
    _common(d)
    d.set_defaults(func=cmd_design)

    m = sub.add_parser("monitor", help="evaluate the next interim analysis")
    m.add_argument("--study-a", required=True)
    m.add_argument("--study-b", required=True)
    m.add_argument("--boundaries")
    m.add_argument("--state", required=True)
    m.add_argument("--out", help="decision JSON (default: standard output)")
    m.add_argument("--plot-data", help="CSV of statistics and boundaries per look")
    _common(m)
    m.set_defaults(func=cmd_monitor, B=None)

    s = sub.add_parser("simulate", help="operating characteristics on synthetic trials")
    s.add_argument("--procedures", default=",".join(PROCEDURE_NAMES[:6]))
    s.add_argument("--reps", type=int, default=1000)
    s.add_argument("--theta", type=float, default=0.0)
    s.add_argument("--J", type=int, default=8)
    s.add_argument("--n-a0", type=int, default=300)
    s.add_argument("--n-a1", type=int, default=300)
    s.add_argument("--n-b0", type=int)
    s.add_argument("--n-b1", type=int)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--delta", type=float, default=0.4, help="Wang-Tsiatis delta")
    s.add_argument("--j0", type=int)
    s.add_argument("--alpha0", type=float)
    s.add_argument("--regenerate-a", action="store_true", help="new Study A in every replication")
    s.add_argument("--support-policy", choices=("trim", "error"), default="trim",
                   help="values outside the Study A control support: leave them out (Study B values "
                        "from their analysis, treated Study A subjects from the design covariance), "
                        "or fail")
    s.add_argument("--out", default="oc_table.csv")
    s.add_argument("--manifest")
    _common(s)
    s.set_defaults(func=cmd_simulate, B=100_000)

    g = sub.add_parser("diagnose", help="empirical checks of the surrogate assumptions")
    g.add_argument("--study-a", required=True)
    g.add_argument("--study-b")
    g.add_argument("--a-col-map")
    g.add_argument("--grid-size", type=int, default=100)
    g.add_argument("--support-tolerance", type=float, default=0.0)
    g.add_argument("--out", default="diagnostics")
    _common(g)
    g.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DataError, BoundaryError, MonitoringError, EstimationError, KernelError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
