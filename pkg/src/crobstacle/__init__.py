"""Crouzeix-Raviart gradient scheme for coupled parabolic obstacle / reaction-diffusion systems."""
from .mesh import Mesh, build_structured_triangulation, mesh_size, refine_uniform
from .discretisation import (GradientDiscretisation, TimeGrid, build_cr, interpolate_edges,
                             interpolate_initial, reconstruct_gradient, reconstruct_value,
                             spacetime_field)
from .assembly import assemble_mass, assemble_reaction_load, assemble_stiffness
from .vi_solver import LcpProblem, LcpSolution, solve_active_set_oracle, solve_psor, solve_spd
from .problem import ProblemSpec, Reaction, TensorField
from .stepper import StepOptions, Trajectory, advance_step, solve_evolution
from .diagnostics import (dual_norm, energy_report, estimate_coercivity, estimate_consistency,
                          estimate_limit_conformity)

__version__ = "0.1.0"
