"""Extremum seeking control for systems that are non-affine in the input.

The package builds the dithered controller, its closed-form averaged systems,
a fixed-step integrator for both, numerical oracles for the averaging
hypotheses and stability-region sweeps.  See :mod:`escna.defaults` for every
tunable default.
"""

from .avgverify import empirical_average_field, verify_uniform_limits, verify_weak_limits
from .esc import (
    AveragedSystem,
    EscController,
    averaged_system_conjecture,
    averaged_system_theorem1,
    control_value,
    epsilon_bound_evenpow,
    equilibrium_boundary_uu,
    synthesize_controller,
)
from .exprlang import diff_expr, eval_expr, parse_expr, simplify, to_source
from .integrate import Trajectory, compare, integrate, integrate_average, integrate_closed_loop
from .model import NonAffineSystem, builtin, load_system, load_system_file, rhs
from .oddpoly import OddPolynomial, avg_gain_A, even_gain_B, fit_odd_polynomial, trig_power_expand
from .sweep import Axis, StabilityGrid, SweepSpec, boundary_agreement, classify_trajectory, run_sweep

__version__ = "0.1.0"

__all__ = [
    "AveragedSystem",
    "Axis",
    "EscController",
    "NonAffineSystem",
    "OddPolynomial",
    "StabilityGrid",
    "SweepSpec",
    "Trajectory",
    "averaged_system_conjecture",
    "averaged_system_theorem1",
    "avg_gain_A",
    "boundary_agreement",
    "builtin",
    "classify_trajectory",
    "compare",
    "control_value",
    "diff_expr",
    "empirical_average_field",
    "epsilon_bound_evenpow",
    "equilibrium_boundary_uu",
    "eval_expr",
    "even_gain_B",
    "fit_odd_polynomial",
    "integrate",
    "integrate_average",
    "integrate_closed_loop",
    "load_system",
    "load_system_file",
    "parse_expr",
    "rhs",
    "run_sweep",
    "simplify",
    "synthesize_controller",
    "to_source",
    "trig_power_expand",
    "verify_uniform_limits",
    "verify_weak_limits",
]
