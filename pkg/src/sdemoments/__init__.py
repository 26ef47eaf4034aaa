"""Moment propagation for invariants of noise-driven dynamical systems.

The library pairs closed-form mean/covariance propagation (Gaussian moment
closure) with Monte Carlo simulation of the underlying stochastic
differential equations, for two systems: the torque-free rigid body under
white noise torques (tracking rotational kinetic energy) and perturbed
two-body motion (tracking the squared angular-momentum norm).
"""

from .backend import BACKEND
from .config import ConfigError, ScenarioConfig, load_bundled, load_config
from .core import GaussianBelief, RngStream, gaussian_third_moment
from .engine import (
    Ensemble,
    EnsembleSeries,
    InvariantFn,
    MomentSeries,
    NumericalAbortError,
    SdeModel,
    em_step,
    ensemble_stats,
    finite_difference_expectation_rate,
    propagate_ensemble,
    rk4_step,
    series_stats,
    uniform_grid,
    validate_invariant_derivatives,
)
from .report import RunReport, write_csv, write_summary
from .rigidbody import (
    InertiaModel,
    RigidBodyMoments,
    cov_rate,
    ke_corr_rate,
    ke_cov_rate,
    ke_mean_rate,
    kinetic_energy_invariant,
    mean_rate,
    moments_from_belief,
    momentum_sq_invariant,
    propagate_moments,
    rigidbody_sde_model,
)
from .runner import run_rigidbody, run_twobody, verify_derivations
from .twobody import (
    GravModel,
    R_h_rate_bounds,
    R_h_rate_exact,
    TwoBodyState,
    circular_orbit_state,
    h_invariant,
    mu_h_rate_bounds,
    mu_h_rate_exact,
    squared_momentum_invariant,
    twobody_sde_model,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ConfigError",
    "Ensemble",
    "EnsembleSeries",
    "GaussianBelief",
    "GravModel",
    "InertiaModel",
    "InvariantFn",
    "MomentSeries",
    "NumericalAbortError",
    "R_h_rate_bounds",
    "R_h_rate_exact",
    "RigidBodyMoments",
    "RngStream",
    "RunReport",
    "ScenarioConfig",
    "SdeModel",
    "TwoBodyState",
    "__version__",
    "circular_orbit_state",
    "cov_rate",
    "em_step",
    "ensemble_stats",
    "finite_difference_expectation_rate",
    "gaussian_third_moment",
    "h_invariant",
    "ke_corr_rate",
    "ke_cov_rate",
    "ke_mean_rate",
    "kinetic_energy_invariant",
    "load_bundled",
    "load_config",
    "mean_rate",
    "moments_from_belief",
    "momentum_sq_invariant",
    "mu_h_rate_bounds",
    "mu_h_rate_exact",
    "propagate_ensemble",
    "propagate_moments",
    "rigidbody_sde_model",
    "rk4_step",
    "run_rigidbody",
    "run_twobody",
    "series_stats",
    "squared_momentum_invariant",
    "twobody_sde_model",
    "uniform_grid",
    "validate_invariant_derivatives",
    "verify_derivations",
    "write_csv",
    "write_summary",
]
