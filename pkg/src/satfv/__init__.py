"""Finite-volume solver for 1D gradient flows with saturation mobility.

The library implements the implicit upwind scheme for
drho/dt = d/dx(m(rho) d/dx(U'(rho) + V)) with no-flux boundaries on (0, 1),
its uniformly elliptic regularisation, steady-state solvers, and audits for
the structural properties of the discretisation (mass conservation,
free-energy dissipation, L1 contraction, comparison, bound preservation).
"""

from .model import (
    MobilityPair, DiffusionPotential, ExternalPotential, RegularizationParams,
    ProblemSpec, decompose_mobility, regularize, mobility_family,
    diffusion_family, potential_family, make_spec, barenblatt_function,
)
from .grid import Grid1D, DensityField, project_initial, l1_norm, \
    w_minus_1_1_norm, discrete_energy
from .scheme import SchemeConfig, StepReport, Trajectory, velocity, flux, \
    apply_H, jacobian, implicit_step, evolve, constant_bracket
from .steady import SteadyProfile, ELVerdict, truncate, truncated_inverse, \
    solve_mass_constant, barenblatt, composite_profile, check_euler_lagrange, \
    verify_fixed_point
from .diagnostics import SteadyDetector, OrderFit, AuditReport, run_to_steady, \
    estimate_order, fit_order, restrict_to_coarse, contraction_audit, \
    energy_audit, random_interior_field

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
