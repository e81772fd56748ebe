"""Group sequential tests of a treatment effect measured through a surrogate marker.

A completed trial (Study A) with surrogate and outcome supplies a kernel
estimate of the control-arm conditional mean outcome given the surrogate.
A new trial (Study B) observes only the surrogate; its treatment effect is
estimated by transporting that conditional mean and monitored at several
interim analyses with Monte Carlo calibrated stopping boundaries.
"""

from .boundaries import (BoundaryError, BoundarySet, ShapeFamily, SpendingFunction, apply_rule,
                         calibrate_efficacy, calibrate_inner_wedge, inner_wedge_boundaries,
                         naive_boundaries, spending_boundaries, spending_boundary_next, spending_plan)
from .data import (AnalysisSchedule, DataError, StudyADataset, StudyBSnapshot, check_support_c5,
                   load_study_a, load_study_b, write_study_a, write_study_b)
from .diagnostics import AssumptionReport, diagnose
from .effect import (CorrelationModel, EffectEstimate, EstimationError, build_correlation_model,
                     delta_e_at, fit_schedule, var_hat_at, w_stat_at)
from .engine import MonitoringError, MonitoringState, evaluate_analysis, monitor_look, new_state, run_full
from .kernel import KernelError, KernelSpec, NeighborhoodError, fit_mu, predict_mu
from .mvn import McConfig, sample_correlated, upper_alpha_quantile
from .simulation import DgpSpec, OperatingCharacteristics, generate_pair, run_operating_characteristics

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
