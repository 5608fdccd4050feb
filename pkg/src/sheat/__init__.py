"""Spectral Galerkin implicit Euler for the stochastic heat equation, with
Monte Carlo weak and strong convergence-rate measurement."""

from .estimator import (
    PHI_COORD,
    PHI_EXP,
    PHI_SQ,
    RateReport,
    TestFunctional,
    error_ladders,
    fit_loglog,
    get_functional,
    moment_probe,
    strong_error_ladder,
    weak_error_ladder,
)
from .integrator import (
    SchemeParams,
    Trajectory,
    euler_step,
    exact_ou_final,
    interpolate,
    run_coupled,
    run_path,
)
from .nemytskii import (
    GridField,
    ModelSpec,
    apply_f,
    apply_sigma_increment,
    make_model,
    to_grid,
    to_spectral,
    validate_model,
)
from .noise import NoisePath, SeedSpec, bridge_sample, coarsen, sample_path
from .spectral import (
    EigenBasis,
    SpectralField,
    apply_A_dt,
    apply_resolvent_power,
    apply_semigroup,
    build_basis,
    fractional_norm,
    trace_fractional,
)

__version__ = "0.1.0"
