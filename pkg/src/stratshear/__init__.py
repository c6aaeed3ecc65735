"""Spectral laboratory for the nonlinear stability of stratified shear flow.

The package splits along the structure of the problem:

- spectral: moving-frame Fourier grids, fractional symbols, dealiased products;
- multipliers: the decaying weights, their closed forms and bounds;
- lineardyn: per-mode linearized dynamics and the weighted energy;
- dispersive: the streamwise-averaged semigroup and its oscillatory decay;
- solver: the nonlinear integrating-factor pseudo-spectral stepper;
- harness: validated experiment configs, runs, threshold scans, reports.
"""

from .dispersive import (
    DispersiveOperator,
    DuhamelSplit,
    PhaseFunction,
    Plane2D,
    duhamel_decompose,
    littlewood_paley_project,
    semigroup_apply,
    stationary_phase_oracle,
    sup_decay_scan,
)
from .harness import (
    ConfigError,
    ExperimentConfig,
    ThresholdResult,
    fit_report,
    run,
    threshold_bisection,
)
from .lineardyn import (
    EnergyReport,
    ModeSet,
    TermSwitches,
    ZeroModeSpectrum,
    energy_functional,
    linear_rhs,
    liftup_diagnostic,
    propagate_linear,
    rate_fit,
    zero_mode_spectrum,
)
from .multipliers import (
    MultiplierParams,
    kappa_floor_m3,
    lambda_beta,
    log_weight,
    main_weight,
    orr_margin,
    scan_multipliers,
    weight_table,
)
from .solver import (
    FlowState,
    SimulationResult,
    SolverParams,
    StepRejected,
    convolution_oracle,
    make_initial_data,
    nonlinear_terms,
    recover_primitive,
    rhs_full,
    simulate,
    step_imex,
)
from .spectral import (
    Grid,
    ModeClass,
    SingularSymbolError,
    SpectralField,
    dealias_product,
    forward_transform,
    fractional_multiplier,
    inverse_transform,
    leray_project,
    project_modes,
    sobolev_norm,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DispersiveOperator",
    "DuhamelSplit",
    "EnergyReport",
    "ExperimentConfig",
    "FlowState",
    "Grid",
    "ModeClass",
    "ModeSet",
    "MultiplierParams",
    "PhaseFunction",
    "Plane2D",
    "SimulationResult",
    "SingularSymbolError",
    "SolverParams",
    "SpectralField",
    "StepRejected",
    "TermSwitches",
    "ThresholdResult",
    "ZeroModeSpectrum",
    "convolution_oracle",
    "dealias_product",
    "duhamel_decompose",
    "energy_functional",
    "fit_report",
    "forward_transform",
    "fractional_multiplier",
    "inverse_transform",
    "kappa_floor_m3",
    "lambda_beta",
    "leray_project",
    "liftup_diagnostic",
    "linear_rhs",
    "littlewood_paley_project",
    "log_weight",
    "main_weight",
    "make_initial_data",
    "nonlinear_terms",
    "orr_margin",
    "project_modes",
    "propagate_linear",
    "rate_fit",
    "recover_primitive",
    "rhs_full",
    "run",
    "scan_multipliers",
    "semigroup_apply",
    "simulate",
    "sobolev_norm",
    "stationary_phase_oracle",
    "step_imex",
    "sup_decay_scan",
    "threshold_bisection",
    "weight_table",
    "zero_mode_spectrum",
]
