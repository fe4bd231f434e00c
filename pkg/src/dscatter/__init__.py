"""Spectral toolkit for scattering solutions from randomized final data."""

from .errors import (
    ConfigurationError,
    DivergenceError,
    DScatterError,
    NonConvergenceError,
    NumericalError,
    PreconditionError,
    ThresholdError,
    ValidationError,
)
from .fitting import FitResult, fit_power_law
from .norms import (
    WeightedNormSpec,
    check_admissible,
    exponent_window,
    gp_energy,
    lower_threshold,
    strauss_exponent,
    weighted_spacetime_norm,
)
from .randomization import CoefficientLaw, randomize_h1dot, randomize_l2
from .solver import SolverConfig, extend_forward, picard_solve, verify_scattering
from .spectral import FourierSymbol, Grid, SpectralField, Trajectory, combined_symbol, free_propagate, gp_propagate
from .systems import SystemSpec, free_system, quadratic_system, scalar_power

__version__ = "0.1.0"
