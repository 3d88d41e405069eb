"""Interacting lattice diffusions: simulation, scaling limit, rare events.

The package is organized around one convex single-site potential.  From it
everything else is built: the N-site conservative particle system, the
empirical measures it traces out, the nonlinear heat equation describing
its scaling limit, the action functional pricing deviations from that
limit, and Monte Carlo machinery for estimating rare-event costs.
"""

from .errors import (CFLViolation, ConfigInvalid, DegenerateEstimate,
                     GLLabError, NonFiniteField, NonFiniteState, NotMeanZero,
                     QuadratureDiverged, RootNotBracketed, SizeCapExceeded,
                     TimeGridMismatch)
from .measures import (AtomicSignedMeasure, MeasurePath, bl_distance, d_star,
                       density_to_atoms, from_state, measure_path_to_csv,
                       path_from_density_slices, path_from_record)
from .particles import (LatticeState, ProfileMeasure, ReplicaBatch, SimConfig,
                        SimpleControl, TrajectoryRecord,
                        deterministic_profile, entropy_cost_of_profile,
                        equilibrium_profile, sample_initial_from_profile,
                        sample_initial_matrix, simulate_replicas,
                        simulate_trajectory, stable_dt, tilted_constant_profile,
                        tilted_profile, tilted_sine_profile)
from .pde import (ControlGrid, DensityField, cfl_time_steps, contraction_gap,
                  control_l2_distance, minimal_control_embedding,
                  solve_controlled_pde, weak_form_residual)
from .potential import (CumulantGenerator, EnvelopeTable, Potential,
                        QuadratureSpec, TiltedFamilySampler,
                        gaussian_potential, make_potential, quartic_potential)
from .rare_events import (ExperimentReport, Functional, SteeringPlan,
                          TrendRow, importance_sampled_expectation,
                          laplace_functional_mc, ldp_trend_study,
                          plain_expectation, simple_control_from_grid,
                          sine_target_field, steering_plan, trend_gaps,
                          variational_upper_bound)
from .rate import (RateDecomposition, dynamic_cost_via_seminorm,
                   h_minus_one_seminorm, initial_cost, minimal_control, rate)

__version__ = "0.1.0"

__all__ = [
    "AtomicSignedMeasure", "CFLViolation", "ConfigInvalid", "ControlGrid",
    "CumulantGenerator", "DegenerateEstimate", "DensityField",
    "EnvelopeTable", "ExperimentReport", "Functional", "GLLabError",
    "LatticeState", "MeasurePath", "NonFiniteField", "NonFiniteState",
    "NotMeanZero", "Potential", "ProfileMeasure", "QuadratureDiverged",
    "QuadratureSpec", "RateDecomposition", "ReplicaBatch", "RootNotBracketed",
    "SimConfig", "SimpleControl", "SizeCapExceeded", "SteeringPlan",
    "TiltedFamilySampler", "TimeGridMismatch", "TrajectoryRecord", "TrendRow",
    "bl_distance", "cfl_time_steps", "contraction_gap", "control_l2_distance",
    "d_star", "density_to_atoms", "deterministic_profile",
    "dynamic_cost_via_seminorm", "entropy_cost_of_profile",
    "equilibrium_profile", "from_state", "gaussian_potential",
    "h_minus_one_seminorm", "importance_sampled_expectation", "initial_cost",
    "laplace_functional_mc", "ldp_trend_study", "make_potential",
    "measure_path_to_csv", "minimal_control", "minimal_control_embedding",
    "path_from_density_slices", "path_from_record", "plain_expectation",
    "quartic_potential", "rate", "sample_initial_from_profile",
    "sample_initial_matrix", "simple_control_from_grid", "simulate_replicas",
    "simulate_trajectory", "sine_target_field", "solve_controlled_pde",
    "stable_dt", "steering_plan", "tilted_constant_profile", "tilted_profile",
    "tilted_sine_profile", "trend_gaps", "variational_upper_bound",
    "weak_form_residual",
]
