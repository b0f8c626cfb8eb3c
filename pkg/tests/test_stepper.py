import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from oracles import dense_cr_operators, scalar_reaction_diffusion

from crobstacle.discretisation import TimeGrid, build_cr, interpolate_initial
from crobstacle.mesh import build_structured_triangulation
from crobstacle.problem import (ProblemSpec, Reaction, bump_field, const_field, isotropic,
                                linear_reactions, sine_field, smooth_isotropic, zero_reactions)
from crobstacle.stepper import (SchemeOperators, StepFailure, StepOptions, TimeStepError,
                                advance_step, initial_levels, solve_evolution)
from crobstacle.vi_solver import solve_spd


def make_spec(reactions=None, obstacle=1e6, a_ini=None, b_ini=None, T=0.5,
              diff_a=None, diff_b=None):
    F, G = reactions or zero_reactions()
    return ProblemSpec(T=T, diff_a=diff_a or isotropic(1.0), diff_b=diff_b or isotropic(1.0),
                       reaction_f=F, reaction_g=G,
                       obstacle=obstacle if callable(obstacle) else const_field(obstacle),
                       a_ini=a_ini or const_field(0.0), b_ini=b_ini or const_field(0.0))


def make_gd(spec, n, steps):
    return build_cr(build_structured_triangulation(n), TimeGrid.uniform(spec.T, steps),
                    spec.obstacle)


def test_zero_data_is_a_fixed_point():
    spec = make_spec(obstacle=0.3)
    gd = make_gd(spec, 4, 4)
    z = np.zeros(gd.n_dofs)
    a, b, rep = advance_step(gd, spec, z, z, 0.125)
    assert_array_equal(a, 0.0)
    assert_array_equal(b, 0.0)
    assert rep.picard_iterations == 1 and rep.converged
    traj = solve_evolution(spec, gd)
    assert_array_equal(traj.a_levels, 0.0)
    assert_array_equal(traj.b_levels, 0.0)


def test_inactive_obstacle_gives_heat_steps():
    spec = make_spec(a_ini=sine_field(1.0), b_ini=bump_field(1.0), diff_b=smooth_isotropic(0.5))
    gd = make_gd(spec, 8, 4)
    ops = SchemeOperators.build(gd, spec)
    a0, b0 = initial_levels(spec, gd)
    dt = 0.125
    opts = StepOptions(polish=False, psor_tol=1e-12, kkt_tol=1e-10)
    a, b, rep = advance_step(gd, spec, a0, b0, dt, opts, ops)
    m = ops.mass
    assert_allclose(b, solve_spd(ops.matrix("b", dt), m * b0 / dt), atol=1e-12)
    assert_allclose(a, solve_spd(ops.matrix("a", dt), m * a0 / dt), atol=10 * opts.kkt_tol)


def test_source_from_b_matches_manual_system():
    """F(a, b) = b, G = 0: the A right-hand side carries the mass-weighted B values."""
    F = Reaction(lambda a, b: b, 1.0, "F=b")
    G = Reaction(lambda a, b: np.zeros_like(a), 0.0, "G=0")
    spec = make_spec(reactions=(F, G), a_ini=sine_field(0.5), b_ini=bump_field(1.0))
    gd = make_gd(spec, 4, 8)
    dt = spec.T / 8
    a0, b0 = initial_levels(spec, gd)
    a, b, rep = advance_step(gd, spec, a0, b0, dt)

    M, K, _ = dense_cr_operators(gd.mesh, lambda x, y: 1.0)
    b_exp = np.linalg.solve(M / dt + K, M @ b0 / dt)
    a_exp = np.linalg.solve(M / dt + K, M @ a0 / dt + M @ b_exp)
    assert_allclose(b, b_exp, atol=1e-12)
    assert_allclose(a, a_exp, atol=1e-9)


def test_decoupled_b_matches_scalar_driver():
    F = Reaction(lambda a, b: -a, 1.0, "f(a)")
    G = Reaction(lambda a, b: -0.5 * b + 0.4 * np.sin(b), 0.9, "g(b)")
    spec = make_spec(reactions=(F, G), obstacle=0.2, a_ini=sine_field(0.1),
                     b_ini=bump_field(1.0), diff_b=smooth_isotropic(0.5))
    gd = make_gd(spec, 8, 16)
    traj = solve_evolution(spec, gd, StepOptions(picard_tol=1e-13))
    smooth = lambda x, y: 0.5 * (1.0 + 0.5 * np.sin(np.pi * x) * np.sin(np.pi * y))
    mid = gd.dof_midpoints
    b0 = 16 * mid[:, 0] * (1 - mid[:, 0]) * mid[:, 1] * (1 - mid[:, 1])
    ref = scalar_reaction_diffusion(gd.mesh, smooth, lambda u: -0.5 * u + 0.4 * np.sin(u),
                                    lambda u: -0.5 + 0.4 * np.cos(u), b0, gd.time_grid.steps)
    assert_allclose(traj.b_levels, ref, atol=1e-10)


@pytest.fixture(scope="module")
def active_run():
    spec = make_spec(reactions=linear_reactions(10, 1, 0, 1), obstacle=0.1,
                     b_ini=bump_field(1.0), diff_a=isotropic(0.2))
    gd = make_gd(spec, 8, 16)
    return gd, solve_evolution(spec, gd)


def test_constraint_preserved_exactly(active_run):
    gd, traj = active_run
    chi = gd.obstacle_dofs
    assert np.all(traj.a_levels <= chi)
    assert np.any(traj.a_levels == chi)


def test_complementarity_residuals(active_run):
    _, traj = active_run
    assert max(traj.residual_sign) <= 1e-8
    assert max(traj.residual_complementarity) <= 1e-8


def test_picard_contraction_flag(active_run):
    _, traj = active_run
    assert all(r.converged for r in traj.reports)
    assert all(r.contraction_ok for r in traj.reports)


def test_single_step_evolution_equals_advance_step():
    spec = make_spec(reactions=linear_reactions(1, 1, 1, 1), obstacle=0.3,
                     a_ini=sine_field(0.2), b_ini=bump_field(1.0), T=0.1)
    gd = make_gd(spec, 4, 1)
    traj = solve_evolution(spec, gd)
    a0, b0 = initial_levels(spec, gd)
    a, b, _ = advance_step(gd, spec, a0, b0, 0.1)
    assert_array_equal(traj.a_levels[1], a)
    assert_array_equal(traj.b_levels[1], b)


def test_oracle_vi_solver_agrees_with_psor():
    spec = make_spec(reactions=linear_reactions(10, 1, 0, 1), obstacle=0.1,
                     b_ini=bump_field(1.0), T=0.04)
    gd = make_gd(spec, 2, 1)
    a0, b0 = initial_levels(spec, gd)
    a1, b1, _ = advance_step(gd, spec, a0, b0, 0.04)
    a2, b2, _ = advance_step(gd, spec, a0, b0, 0.04, StepOptions(vi_solver="oracle"))
    assert np.any(a1 == gd.obstacle_dofs)
    assert_allclose(a1, a2, atol=1e-8)
    assert_allclose(b1, b2, atol=1e-8)


def test_time_step_restriction():
    spec = make_spec(reactions=linear_reactions(10, 1, 0, 1))
    gd = make_gd(spec, 2, 4)
    z = np.zeros(gd.n_dofs)
    with pytest.raises(TimeStepError, match="1/\\(2M\\)"):
        advance_step(gd, spec, z, z, 0.1)
    with pytest.raises(TimeStepError):
        solve_evolution(spec, gd)


def test_infeasible_start_rejected():
    spec = make_spec(obstacle=0.1)
    gd = make_gd(spec, 2, 4)
    with pytest.raises(ValueError):
        advance_step(gd, spec, np.full(gd.n_dofs, 0.5), np.zeros(gd.n_dofs), 0.1)


def test_picard_failure_reports_partial_trajectory():
    spec = make_spec(reactions=linear_reactions(1, 1, 1, 1), a_ini=sine_field(0.5),
                     b_ini=bump_field(1.0))
    gd = make_gd(spec, 4, 4)
    with pytest.raises(StepFailure) as info:
        solve_evolution(spec, gd, StepOptions(picard_max=2))
    assert info.value.step == 0
    assert len(info.value.trajectory.a_levels) == 2


def test_damping_still_converges(caplog):
    spec = make_spec(reactions=linear_reactions(1, 1, 1, 1), obstacle=0.3,
                     a_ini=sine_field(0.2), b_ini=bump_field(1.0))
    gd = make_gd(spec, 4, 4)
    a0, b0 = initial_levels(spec, gd)
    a_ref, b_ref, _ = advance_step(gd, spec, a0, b0, 0.125)
    with caplog.at_level(logging.INFO):
        a, b, rep = advance_step(gd, spec, a0, b0, 0.125, StepOptions(damping=0.5, picard_max=200))
    assert rep.converged
    assert_allclose(a, a_ref, atol=1e-8)
    assert_allclose(b, b_ref, atol=1e-8)


def test_options_validation():
    with pytest.raises(ValueError):
        StepOptions(picard_tol=0.0)
    with pytest.raises(ValueError):
        StepOptions(damping=1.5)
    with pytest.raises(ValueError):
        StepOptions(vi_solver="newton")
