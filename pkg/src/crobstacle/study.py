"""Refinement studies: self-convergence against a finer reference solve."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .discretisation import GradientDiscretisation, TimeGrid, build_cr
from .mesh import build_structured_triangulation, mesh_size
from .problem import ProblemSpec
from .quadrature import TRI7_BARY, TRI7_WEIGHTS, triangle_points
from .stepper import StepOptions, Trajectory, solve_evolution

log = logging.getLogger(__name__)

ERROR_NAMES = ("PiA_LinfL2", "gradA_L2L2", "PiB_LinfL2", "gradB_L2L2")


class FineProjector:
    """Evaluates fields of a coarse CR space on the quadrature of a nested fine mesh."""

    def __init__(self, coarse: GradientDiscretisation, fine: GradientDiscretisation):
        fmesh = fine.mesh
        cmesh = coarse.mesh
        pts = triangle_points(fmesh).reshape(-1, 2)
        cells = cmesh.locate(pts)
        if np.any(cells < 0):
            raise ValueError("fine quadrature point outside the coarse mesh")
        p = cmesh.vertices[cmesh.cells[cells]]
        lam = np.empty((len(pts), 3))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            a = p[:, j] - pts
            b = p[:, k] - pts
            lam[:, i] = (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]) / (2.0 * cmesh.areas[cells])
        rows = np.repeat(np.arange(len(pts)), 3)
        cols = cmesh.cell_edges[cells].ravel()
        self.values = sp.csr_matrix(((1.0 - 2.0 * lam).ravel(), (rows, cols)),
                                    shape=(len(pts), cmesh.n_edges))
        self.grad_cells = cmesh.locate(fmesh.barycenters)
        self.coarse = coarse
        self.fine = fine
        self.weights = (fmesh.areas[:, None] * TRI7_WEIGHTS[None, :]).ravel()

    def coarse_values(self, levels) -> np.ndarray:
        """(N+1, C_f*7) values of coarse levels at fine quadrature points."""
        return (self.values @ self.coarse.full(levels).T).T

    def coarse_gradients(self, levels) -> np.ndarray:
        """(N+1, C_f, 2) coarse gradients on fine cells."""
        full = self.coarse.full(levels)
        local = full[:, self.coarse.mesh.cell_edges]
        g = np.einsum("nci,cid->ncd", local, self.coarse.basis_gradients)
        return g[:, self.grad_cells]


def fine_values(gd: GradientDiscretisation, levels) -> np.ndarray:
    full = gd.full(levels)
    local = full[:, gd.mesh.cell_edges]
    return (local @ (1.0 - 2.0 * TRI7_BARY).T).reshape(len(full), -1)


def fine_gradients(gd: GradientDiscretisation, levels) -> np.ndarray:
    full = gd.full(levels)
    local = full[:, gd.mesh.cell_edges]
    return np.einsum("nci,cid->ncd", local, gd.basis_gradients)


def spacetime_errors(coarse_traj: Trajectory, ref_traj: Trajectory,
                     projector: FineProjector | None = None) -> dict:
    """L-inf(L2) errors of the reconstructions and L2(L2) errors of the gradients.

    Both trajectories are piecewise constant in time; the coarse grid must
    be nested in the reference grid.
    """
    cg, rg = coarse_traj.gd, ref_traj.gd
    if projector is None:
        projector = FineProjector(cg, rg)
    t_c, t_r = cg.time_grid.times, rg.time_grid.times
    ratio = (len(t_r) - 1) // (len(t_c) - 1)
    if ratio * (len(t_c) - 1) != len(t_r) - 1 or not np.allclose(t_r[::ratio], t_c, rtol=0, atol=1e-13):
        raise ValueError("time grids are not nested")
    idx = np.concatenate([[0], (np.arange(1, len(t_r)) + ratio - 1) // ratio])
    dt = rg.time_grid.steps
    w = projector.weights
    area = rg.mesh.areas

    out = {}
    for name, attr in (("A", "a_levels"), ("B", "b_levels")):
        c_levels = getattr(coarse_traj, attr)
        r_levels = getattr(ref_traj, attr)
        dv = projector.coarse_values(c_levels)[idx] - fine_values(rg, r_levels)
        l2 = np.sqrt(np.maximum(dv ** 2 @ w, 0.0))
        dg = projector.coarse_gradients(c_levels)[idx] - fine_gradients(rg, r_levels)
        g2 = np.sum(dg ** 2, axis=2) @ area
        out[f"Pi{name}_LinfL2"] = float(l2.max())
        out[f"grad{name}_L2L2"] = float(np.sqrt(np.sum(dt * g2[1:])))
    return out


@dataclass
class LevelResult:
    level: int
    n: int
    h: float
    steps: int
    dt: float
    trajectory: Trajectory


def solve_level(spec: ProblemSpec, n: int, steps: int, opts: StepOptions, level: int = 0
                ) -> LevelResult:
    mesh = build_structured_triangulation(n)
    grid = TimeGrid.uniform(spec.T, steps)
    gd = build_cr(mesh, grid, spec.obstacle)
    traj = solve_evolution(spec, gd, opts)
    return LevelResult(level, n, mesh_size(mesh), steps, grid.max_step, traj)


def self_convergence(spec: ProblemSpec, n0: int, steps0: int, levels: int,
                     opts: StepOptions | None = None, reference: LevelResult | None = None,
                     results: list | None = None):
    """Solve levels ``n0 * 2**l`` (l < levels) and a reference at ``n0 * 2**levels``.

    Time steps scale with the mesh (``steps0 * 2**l``).  Returns the list of
    level results, the reference and one error dict per level.
    """
    opts = opts or StepOptions()
    if results is None:
        results = [solve_level(spec, n0 * 2 ** l, steps0 * 2 ** l, opts, l) for l in range(levels)]
    if reference is None:
        reference = solve_level(spec, n0 * 2 ** levels, steps0 * 2 ** levels, opts, levels)
    errors = [spacetime_errors(r.trajectory, reference.trajectory) for r in results]
    return results, reference, errors


def orders(errors: list[dict]) -> list[dict]:
    """Empirical orders ``log2(e_l / e_{l+1})`` (None on the first level)."""
    out = [{k: None for k in ERROR_NAMES}]
    for prev, cur in zip(errors, errors[1:]):
        out.append({k: (math.log2(prev[k] / cur[k]) if prev[k] > 0 and cur[k] > 0 else None)
                    for k in ERROR_NAMES})
    return out


def strictly_decreasing(errors: list[dict], zero: float = 1e-14) -> dict:
    """Per error norm: strictly decreasing, or identically (numerically) zero."""
    out = {}
    for k in ERROR_NAMES:
        seq = [e[k] for e in errors]
        out[k] = all(v <= zero for v in seq) or all(b < a for a, b in zip(seq, seq[1:]))
    return out


def variation(values) -> float:
    """``(max - min) / max`` of a positive sequence (0 for all-zero input)."""
    values = np.asarray(values, dtype=float)
    top = np.max(np.abs(values))
    return 0.0 if top == 0 else float((values.max() - values.min()) / top)
