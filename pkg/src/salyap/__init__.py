"""Simulation and verification toolkit for stochastic approximation.

Runs the recursion theta_{t+1} = theta_t + alpha_t (f(theta_t) + xi_{t+1})
under configurable fields, step schedules, and noise models; checks the
Lyapunov-style hypotheses behind boundedness and convergence guarantees on
sample grids; and constructs an integral Lyapunov certificate for
exponentially stable fields, with empirically fitted envelope constants.
"""

from .core import (ClassReport, ComparatorFunction, SampleGrid, SolutionSet,
                   VectorField, check_class_membership, distance_to_set,
                   grid_infimum, make_comparator, make_field,
                   refine_equilibrium, scale_limit_probe)
from .ode import (FlowResult, GronwallReport, IntegrationError, NoDecayError,
                  StabilityEstimate, check_gronwall_lower_bound,
                  estimate_stability_constants, integrate_flow,
                  integrate_flow_rk4)
from .lyapunov import (CheckReport, ConverseParams, LyapunovConstants,
                       LyapunovFunction, check_F4, check_decay,
                       check_generalized_sandwich, check_gradient_linear_bound,
                       check_hessian_bound, check_sandwich, construct_converse_V,
                       fit_envelope_constants, make_lyapunov,
                       solve_lyapunov_matrix_equation, spectral_norm_power,
                       vdot, vdot_batch)
from .sa_engine import (NoiseModel, SamplePath, ScheduleClassification,
                        StepSchedule, classify_schedule, derive_path_seeds,
                        run_ensemble, run_path, step)
from .analysis import (DivisionOfLaborReport, EnsembleSummary, RSConstants,
                       RSLedgerEntry, attach_rs_ledgers, default_cap,
                       division_of_labor_experiment, log_spaced_checkpoints,
                       rs_checkpoint, summarize_ensemble)
from .config import ConfigError, ExperimentConfig, load_config, save_config

__version__ = "0.1.0"

__all__ = [
    "ClassReport", "ComparatorFunction", "SampleGrid", "SolutionSet",
    "VectorField", "check_class_membership", "distance_to_set", "grid_infimum",
    "make_comparator", "make_field", "refine_equilibrium", "scale_limit_probe",
    "FlowResult", "GronwallReport", "IntegrationError", "NoDecayError",
    "StabilityEstimate", "check_gronwall_lower_bound",
    "estimate_stability_constants", "integrate_flow", "integrate_flow_rk4",
    "CheckReport", "ConverseParams", "LyapunovConstants", "LyapunovFunction",
    "check_F4", "check_decay", "check_generalized_sandwich",
    "check_gradient_linear_bound", "check_hessian_bound", "check_sandwich",
    "construct_converse_V", "fit_envelope_constants", "make_lyapunov",
    "solve_lyapunov_matrix_equation", "spectral_norm_power", "vdot", "vdot_batch",
    "NoiseModel", "SamplePath", "ScheduleClassification", "StepSchedule",
    "classify_schedule", "derive_path_seeds", "run_ensemble", "run_path", "step",
    "DivisionOfLaborReport", "EnsembleSummary", "RSConstants", "RSLedgerEntry",
    "attach_rs_ledgers", "default_cap", "division_of_labor_experiment",
    "log_spaced_checkpoints", "rs_checkpoint", "summarize_ensemble",
    "ConfigError", "ExperimentConfig", "load_config", "save_config",
    "__version__",
]
