"""Finite-time quantum Otto engine driven by stochastic reservoir noise.

Natural units hbar = m = omega_0 = 1 throughout.
"""
from .analysis import (
    PhaseDiagram,
    VarianceQuadruple,
    assemble_phase_diagram,
    entropy_gaussian,
    estimate_WI_qp,
    estimate_works,
    minimal_tau_I,
    omega_integral,
    ratio_R,
    squeezing_parameters,
    von_neumann_entropy,
)
from .ensemble import ConfigError, RunConfig, RunError, RunResult, config_from_dict, crosscheck, load_config, run, sweep
from .gaussian import GaussianState, step_gaussian, thermal_state
from .grid import DensityGrid, GridOverflowError, GridPropagator, GridSpec, observables_grid, step_grid
from .protocol import CycleSchedule, StaticSchedule, controls_at, potential_at, stroke_boundaries
from .reservoir import NoisePath, ReservoirSpec, noise_psd, sample_noise, spectral_density
from .thermo import CycleLedger, EngineReport, Phase, detect_pss, engine_figures, first_law_residual

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CycleLedger", "CycleSchedule", "DensityGrid", "EngineReport", "GaussianState",
    "GridOverflowError", "GridPropagator", "GridSpec", "NoisePath", "Phase", "PhaseDiagram", "ReservoirSpec",
    "RunConfig", "RunError", "RunResult", "StaticSchedule", "VarianceQuadruple", "assemble_phase_diagram",
    "config_from_dict", "controls_at", "crosscheck", "detect_pss", "engine_figures", "entropy_gaussian",
    "estimate_WI_qp", "estimate_works", "first_law_residual", "load_config", "minimal_tau_I", "noise_psd",
    "observables_grid", "omega_integral", "potential_at", "ratio_R", "run", "sample_noise", "spectral_density",
    "squeezing_parameters", "step_gaussian", "step_grid", "stroke_boundaries", "sweep", "thermal_state",
    "von_neumann_entropy",
]
