"""Implicit gradient scheme with a damped Picard loop per time step.

At each step the reaction arguments are frozen at the current iterate; the
A-update is an obstacle LCP and the B-update a linear SPD solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import assemble_stiffness, mass_diagonal
from .discretisation import GradientDiscretisation, SpaceTimeField, interpolate_initial
from .problem import ProblemSpec
from .vi_solver import LcpProblem, SpdSolver, solve_active_set_oracle, solve_psor

log = logging.getLogger(__name__)


class TimeStepError(ValueError):
    """The time step violates the restriction dt < 1/(2M)."""


class StepFailure(RuntimeError):
    def __init__(self, step: int, report: "StepReport", trajectory: "Trajectory"):
        super().__init__(f"time step {step} did not converge after "
                         f"{report.picard_iterations} Picard iterations "
                         f"(last change {report.changes[-1]:.3e})")
        self.step = step
        self.report = report
        self.trajectory = trajectory


@dataclass
class StepOptions:
    picard_tol: float = 1e-10
    picard_max: int = 50
    omega: float = 1.5
    psor_tol: float = 1e-10
    psor_max_iter: int = 20000
    kkt_tol: float = 1e-9
    damping: float = 1.0
    polish: bool = True
    vi_solver: str = "psor"

    def __post_init__(self):
        if self.picard_tol <= 0 or self.psor_tol <= 0 or self.kkt_tol <= 0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")
        if self.vi_solver not in ("psor", "oracle"):
            raise ValueError(f"unknown VI solver {self.vi_solver!r}")


@dataclass
class StepReport:
    picard_iterations: int
    converged: bool
    changes: list
    damping: float
    psor_iterations: int
    residual_sign: float
    residual_complementarity: float
    contraction_ok: bool = True


@dataclass
class SchemeOperators:
    """Mass diagonal and diffusion matrices, plus factorisations cached by step size."""
    mass: np.ndarray
    K_a: object
    K_b: object
    _solvers: dict = field(default_factory=dict, repr=False)

    @classmethod
    def build(cls, gd: GradientDiscretisation, spec: ProblemSpec) -> "SchemeOperators":
        return cls(mass_diagonal(gd), assemble_stiffness(gd, spec.diff_a),
                   assemble_stiffness(gd, spec.diff_b))

    def matrix(self, which: str, dt: float):
        K = self.K_a if which == "a" else self.K_b
        return K + sp.diags(self.mass / dt, format="csr")

    def solver(self, which: str, dt: float) -> SpdSolver:
        key = (which, float(dt))
        if key not in self._solvers:
            self._solvers[key] = SpdSolver(self.matrix(which, dt))
        return self._solvers[key]


def strong_residual(ops: SchemeOperators, spec: ProblemSpec, a_prev, a_new, b_new, dt):
    """``r = m (A^{n+1} - A^n)/dt + K_A A^{n+1} - m F(A^{n+1}, B^{n+1})``."""
    m = ops.mass
    return m * (a_new - a_prev) / dt + ops.K_a @ a_new - m * spec.reaction_f(a_new, b_new)


def complementarity(r, a, chi) -> tuple[float, float]:
    """(max positive part of r, max |r (A - chi)| / (1 + |chi|)); infinite chi counts |r|."""
    if len(r) == 0:
        return 0.0, 0.0
    finite = np.isfinite(chi)
    chi_f = np.where(finite, chi, 0.0)
    prod = np.where(finite, np.abs(r * (a - chi_f)) / (1.0 + np.abs(chi_f)), np.abs(r))
    return float(np.maximum(r, 0.0).max()), float(prod.max())


def check_time_step(spec: ProblemSpec, dt: float) -> None:
    if dt <= 0:
        raise TimeStepError("time step must be positive")
    if spec.M > 0 and dt >= 1.0 / (2.0 * spec.M):
        raise TimeStepError(
            f"time step {dt:.6g} violates the energy-estimate restriction dt < 1/(2M) = "
            f"{1.0 / (2.0 * spec.M):.6g} (M = {spec.M:.6g})")


def advance_step(gd: GradientDiscretisation, spec: ProblemSpec, a_n, b_n, dt: float,
                 opts: StepOptions | None = None, ops: SchemeOperators | None = None):
    """One implicit step; returns ``(a_next, b_next, report)``."""
    opts = opts or StepOptions()
    check_time_step(spec, dt)
    if ops is None:
        ops = SchemeOperators.build(gd, spec)
    chi = gd.obstacle_dofs
    a_n = np.asarray(a_n, dtype=float)
    b_n = np.asarray(b_n, dtype=float)
    if np.any(a_n > chi):
        raise ValueError("A^n is not in the discrete constraint set")

    m = ops.mass
    H_a = ops.matrix("a", dt)
    solve_a_free = ops.solver("a", dt)
    solve_b = ops.solver("b", dt)

    a, b = a_n.copy(), b_n.copy()
    theta = opts.damping
    changes = []
    psor_its = 0
    converged = False
    k = 0
    while k < opts.picard_max:
        k += 1
        q = m * a_n / dt + m * spec.reaction_f(a, b)
        lcp = LcpProblem(H_a, q, chi)
        if opts.vi_solver == "oracle":
            a_star = solve_active_set_oracle(lcp)
        else:
            sol = solve_psor(lcp, x0=a, omega=opts.omega, tol=opts.psor_tol,
                             max_iter=opts.psor_max_iter, kkt_tol=opts.kkt_tol,
                             polish=opts.polish, full_solver=solve_a_free)
            psor_its += sol.iterations
            a_star = sol.x
        b_star = solve_b(m * b_n / dt + m * spec.reaction_g(a, b))

        a_next = np.minimum((1.0 - theta) * a + theta * a_star, chi) if theta < 1 else a_star
        b_next = (1.0 - theta) * b + theta * b_star if theta < 1 else b_star
        change = max(np.abs(a_next - a).max(initial=0.0), np.abs(b_next - b).max(initial=0.0))
        changes.append(float(change))
        a, b = a_next, b_next
        if change <= opts.picard_tol:
            converged = True
            break
        if len(changes) >= 3 and changes[-1] > changes[-2] > changes[-3]:
            theta *= 0.5
            log.info("Picard oscillation detected; damping reduced to %g", theta)

    contraction_ok = all(c2 <= c1 for c1, c2 in zip(changes[1:], changes[2:]))
    if not contraction_ok:
        log.warning("Picard changes not monotone after first iteration: %s", changes)
    r = strong_residual(ops, spec, a_n, a, b, dt)
    sign, comp = complementarity(r, a, chi)
    report = StepReport(k, converged, changes, theta, psor_its, sign, comp, contraction_ok)
    return a, b, report


@dataclass
class Trajectory:
    gd: GradientDiscretisation
    a_levels: np.ndarray
    b_levels: np.ndarray
    reports: list

    @property
    def times(self) -> np.ndarray:
        return self.gd.time_grid.times

    @property
    def picard_iterations(self) -> list:
        return [r.picard_iterations for r in self.reports]

    @property
    def residual_sign(self) -> list:
        return [r.residual_sign for r in self.reports]

    @property
    def residual_complementarity(self) -> list:
        return [r.residual_complementarity for r in self.reports]

    def field_a(self) -> SpaceTimeField:
        return SpaceTimeField(self.gd, self.a_levels)

    def field_b(self) -> SpaceTimeField:
        return SpaceTimeField(self.gd, self.b_levels)


def initial_levels(spec: ProblemSpec, gd: GradientDiscretisation):
    a0 = interpolate_initial(gd, spec.a_ini, clamp_to_obstacle=True)
    b0 = interpolate_initial(gd, spec.b_ini)
    return a0, b0


def solve_evolution(spec: ProblemSpec, gd: GradientDiscretisation,
                    opts: StepOptions | None = None) -> Trajectory:
    opts = opts or StepOptions()
    grid = gd.time_grid
    for dt in np.unique(grid.steps):
        check_time_step(spec, dt)
    ops = SchemeOperators.build(gd, spec)
    a0, b0 = initial_levels(spec, gd)
    a_levels = np.zeros((grid.n_steps + 1, gd.n_dofs))
    b_levels = np.zeros_like(a_levels)
    a_levels[0], b_levels[0] = a0, b0
    reports = []
    for n, dt in enumerate(grid.steps):
        a, b, rep = advance_step(gd, spec, a_levels[n], b_levels[n], dt, opts, ops)
        a_levels[n + 1], b_levels[n + 1] = a, b
        reports.append(rep)
        if not rep.converged:
            partial = Trajectory(gd, a_levels[:n + 2], b_levels[:n + 2], reports)
            raise StepFailure(n, rep, partial)
    return Trajectory(gd, a_levels, b_levels, reports)
