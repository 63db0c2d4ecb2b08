"""Particle simulation and Lyapunov audits for regime-switching McKean-Vlasov SDEs."""
from .catalog import example1, example2, get_builtin
from .lyapunov import (
    DriftReport,
    apply_coupled_generator,
    apply_generator,
    check_contraction,
    check_drift_H2,
    moment_bound_check,
)
from .measures import EmpiricalMeasure, ot_cost, wasserstein_1d, weighted_tv_binned
from .model import (
    CoefficientField,
    LyapunovSpec,
    MeasureStats,
    ModelSpec,
    RateMatrix,
    validate_q_property,
)
from .particle import InitialLaw, SimConfig, picard_law_iteration, simulate, synchronous_pair_simulate
from .switching import SwitchMode, basic_coupling, meet_and_merge_step, step_regime

__all__ = [
    "CoefficientField", "DriftReport", "EmpiricalMeasure", "InitialLaw", "LyapunovSpec",
    "MeasureStats", "ModelSpec", "RateMatrix", "SimConfig", "SwitchMode",
    "apply_coupled_generator", "apply_generator", "basic_coupling", "check_contraction",
    "check_drift_H2", "example1", "example2", "get_builtin", "meet_and_merge_step",
    "moment_bound_check", "ot_cost", "picard_law_iteration", "simulate", "step_regime",
    "synchronous_pair_simulate", "validate_q_property", "wasserstein_1d", "weighted_tv_binned",
]
