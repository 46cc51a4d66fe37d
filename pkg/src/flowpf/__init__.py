"""Particle flow particle filters (EDH / LEDH flows with importance weighting)."""

from .experiment import ExperimentResult, ExperimentSpec, FilterSpec, run_experiment, stream
from .filters import FILTER_NAMES, FilterConfig, ParticleEnsemble, make_filter, run_filter
from .flow import (
    FlowAuxiliary,
    StepSchedule,
    make_exponential_schedule,
    make_uniform_schedule,
    run_edh_flow,
    run_ledh_flow,
)
from .kalman import GaussianBelief
from .metrics import mse, omat, perturb_covariance, target_positions
from .scenarios import (
    PRESETS,
    acoustic_scenario,
    initial_state_sampler,
    linear_gaussian_scenario,
    make_scenario,
    skewt_poisson_scenario,
)
from .ssm import LinearGaussianDynamics, LinearGaussianMeasurement, StateSpaceModel

__version__ = "0.1.0"

__all__ = [
    "ExperimentResult",
    "ExperimentSpec",
    "FILTER_NAMES",
    "FilterConfig",
    "FilterSpec",
    "FlowAuxiliary",
    "GaussianBelief",
    "LinearGaussianDynamics",
    "LinearGaussianMeasurement",
    "PRESETS",
    "ParticleEnsemble",
    "StateSpaceModel",
    "StepSchedule",
    "acoustic_scenario",
    "initial_state_sampler",
    "linear_gaussian_scenario",
    "make_exponential_schedule",
    "make_filter",
    "make_scenario",
    "make_uniform_schedule",
    "mse",
    "omat",
    "perturb_covariance",
    "run_edh_flow",
    "run_experiment",
    "run_filter",
    "run_ledh_flow",
    "skewt_poisson_scenario",
    "stream",
    "target_positions",
]
