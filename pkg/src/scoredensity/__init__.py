"""Density estimation and parameter estimation from diffusion-model scores.

The package turns score oracles along the Ornstein-Uhlenbeck process into
log-density estimates, fits parametric families with the DDPM objective,
and runs the accompanying testing experiments.
"""

__version__ = "0.1.0"

from .ddpm import (
    DdpmFit,
    EfficiencyReport,
    ParametricFamily,
    ddpm_mle_gap,
    ddpm_risk,
    efficiency_experiment,
    fisher_information,
    fit_ddpm,
    gaussian_location_family,
    symmetric_mixture_family,
)
from .density import (
    differential_entropy,
    early_stopped_batch,
    early_stopped_estimate,
    log_density_batch,
    log_density_estimate,
    pac_evaluate,
)
from .estimators import DDPMEstimator, ScoreDensityEstimator
from .families import (
    GaussianMixture,
    HclweParams,
    gaussian,
    glm_locality_check,
    hclwe_mixture,
    null_gaussian,
    regularity_constants,
    symmetric_mixture,
)
from .integrated import ScheduleParams, default_schedule, estimate_v, estimate_v_batch
from .oracles import ScoreOracle, biased_oracle, exact_oracle, random_field_oracle, shifted_oracle
from .ou import DomainError, GaussianParams, TimeWindow, identity_constant, kl_error_bound
from .rng import stream
from .tester import HclwePipeline, TesterConfig, hclwe_experiment, run_tester, uniform_unit_vector

__all__ = [name for name in dir() if not name.startswith("_")]
