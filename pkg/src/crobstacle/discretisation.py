"""Nonconforming P1 (Crouzeix-Raviart) gradient discretisation.

DOFs live on interior edges; boundary edges carry an implicit zero so that
the discrete space encodes homogeneous Dirichlet conditions.  On a cell the
reconstruction is ``sum_i w_i (1 - 2 lambda_i)`` where ``w_i`` is the value on
the edge opposite vertex ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import Mesh
from .quadrature import GAUSS2_NODES, edge_average

ScalarField = Callable[[np.ndarray, np.ndarray], np.ndarray]


class TimeGrid:
    """Strictly increasing times ``0 = t0 < t1 < ... < tN = T``."""

    def __init__(self, times):
        times = np.array(times, dtype=float)
        if times.ndim != 1 or len(times) < 2:
            raise ValueError("a time grid needs at least two times")
        if times[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("time grid must be strictly increasing")
        times.flags.writeable = False
        self.times = times

    @classmethod
    def uniform(cls, T: float, n_steps: int) -> "TimeGrid":
        if T <= 0 or n_steps < 1:
            raise ValueError("need T > 0 and at least one step")
        t = np.linspace(0.0, T, n_steps + 1)
        t[-1] = T
        return cls(t)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def max_step(self) -> float:
        return float(self.steps.max())

    def interval(self, t: float) -> int:
        """Index n with t in (t^n, t^(n+1)]; t = 0 maps to interval 0."""
        if t < 0 or t > self.T * (1 + 1e-14):
            raise ValueError(f"time {t} outside [0, {self.T}]")
        n = int(np.searchsorted(self.times, t, side="left")) - 1
        return min(max(n, 0), self.n_steps - 1)

    def __repr__(self):
        return f"TimeGrid(N={self.n_steps}, T={self.T})"


@dataclass(eq=False)
class GradientDiscretisation:
    mesh: Mesh
    time_grid: TimeGrid
    dof_of_edge: np.ndarray          # (E,) DOF index or -1 on boundary edges
    dof_edges: np.ndarray            # (ndof,) edge index of each DOF
    cell_dofs: np.ndarray            # (C, 3) DOF of local edge i or -1
    basis_gradients: np.ndarray      # (C, 3, 2) gradient of e_K^sigma
    obstacle_edges: np.ndarray       # (E,) edge averages of the obstacle
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_dofs(self) -> int:
        return len(self.dof_edges)

    @property
    def obstacle_dofs(self) -> np.ndarray:
        return self.obstacle_edges[self.dof_edges]

    @property
    def dof_midpoints(self) -> np.ndarray:
        return self.mesh.edge_midpoints[self.dof_edges]

    def full(self, v) -> np.ndarray:
        """Expand a DOF vector to all edges (zero on the boundary).

        A vector that already holds one value per edge is returned as a copy,
        so reconstructions also work for fields with boundary values.
        """
        v = np.asarray(v, dtype=float)
        if v.shape[-1] == self.mesh.n_edges:
            return v.copy()
        if v.shape[-1] != self.n_dofs:
            raise ValueError(f"expected {self.n_dofs} DOF values, got {v.shape[-1]}")
        out = np.zeros(v.shape[:-1] + (self.mesh.n_edges,))
        out[..., self.dof_edges] = v
        return out

    def local_values(self, v) -> np.ndarray:
        """Edge values per cell, shape (C, 3)."""
        return self.full(v)[self.mesh.cell_edges]

    def cell_gradients(self, v) -> np.ndarray:
        """Cellwise constant gradient reconstruction, shape (C, 2)."""
        return np.einsum("ci,cid->cd", self.local_values(v), self.basis_gradients)

    def evaluate(self, v, bary) -> np.ndarray:
        """Reconstructed values at barycentric points ``bary`` (Q, 3) of every cell -> (C, Q)."""
        basis = 1.0 - 2.0 * np.asarray(bary)
        return self.local_values(v) @ basis.T

    def cell_means(self, v) -> np.ndarray:
        """Barycenter values, equal to the mean of the three edge values."""
        return self.local_values(v).mean(axis=1)

    def field(self, v) -> "DiscreteField":
        return DiscreteField(self, v)


def build_cr(mesh: Mesh, time_grid: TimeGrid, obstacle: ScalarField | None = None
             ) -> GradientDiscretisation:
    """Build the CR gradient discretisation; ``obstacle=None`` means no constraint."""
    boundary = mesh.boundary
    dof_edges = np.flatnonzero(~boundary)
    dof_of_edge = np.full(mesh.n_edges, -1, dtype=np.int64)
    dof_of_edge[dof_edges] = np.arange(len(dof_edges))

    if obstacle is None:
        chi = np.full(mesh.n_edges, np.inf)
    else:
        _check_boundary_obstacle(mesh, obstacle)
        chi = edge_average(mesh, obstacle)
        if not np.all(np.isfinite(chi)):
            raise ValueError("obstacle edge averages are not finite")

    for arr in (dof_edges, dof_of_edge, chi):
        arr.flags.writeable = False
    cell_dofs = dof_of_edge[mesh.cell_edges]
    grads = -2.0 * mesh.lambda_gradients
    cell_dofs.flags.writeable = False
    grads.flags.writeable = False
    return GradientDiscretisation(mesh, time_grid, dof_of_edge, dof_edges,
                                  cell_dofs, grads, chi)


def _check_boundary_obstacle(mesh, obstacle):
    bnd = np.flatnonzero(mesh.boundary)
    ev = mesh.vertices[mesh.edges[bnd]]
    ts = np.concatenate([[0.0, 0.5, 1.0], GAUSS2_NODES])
    for t in ts:
        pts = (1.0 - t) * ev[:, 0] + t * ev[:, 1]
        vals = np.broadcast_to(obstacle(pts[:, 0], pts[:, 1]), (len(bnd),))
        if np.any(vals < 0.0):
            k = int(np.argmax(vals < 0.0))
            x, y = pts[k]
            raise ValueError(
                f"obstacle must be >= 0 on the boundary; value {vals[k]:.3e} at ({x:.4g}, {y:.4g})")


def in_constraint_set(gd: GradientDiscretisation, v) -> bool:
    """Membership in K_D: DOF-wise ``v <= chi_sigma``."""
    return bool(np.all(np.asarray(v) <= gd.obstacle_dofs))


def reconstruct_value(gd: GradientDiscretisation, v, cell: int, point, tol: float = 1e-12) -> float:
    lam = gd.mesh.barycentric(cell, point)
    if lam.min() < -tol:
        raise ValueError(f"point {tuple(point)} is outside cell {cell}")
    w = gd.full(v)[gd.mesh.cell_edges[cell]]
    return float(np.dot(w, 1.0 - 2.0 * lam))


def reconstruct_gradient(gd: GradientDiscretisation, v, cell: int) -> np.ndarray:
    w = gd.full(v)[gd.mesh.cell_edges[cell]]
    return w @ gd.basis_gradients[cell]


def interpolate_edges(gd: GradientDiscretisation, w: ScalarField) -> np.ndarray:
    """Midpoint interpolant on every edge, boundary included (no boundary condition)."""
    mid = gd.mesh.edge_midpoints
    return np.array(np.broadcast_to(w(mid[:, 0], mid[:, 1]), (gd.mesh.n_edges,)), dtype=float)


def interpolate_initial(gd: GradientDiscretisation, w: ScalarField,
                        clamp_to_obstacle: bool = False) -> np.ndarray:
    """Edge-midpoint interpolant; clamped to the discrete obstacle when requested."""
    mid = gd.dof_midpoints
    z = np.array(np.broadcast_to(w(mid[:, 0], mid[:, 1]), (gd.n_dofs,)), dtype=float)
    if clamp_to_obstacle:
        z = np.minimum(z, gd.obstacle_dofs)
    return z


class DiscreteField:
    """Pointwise evaluation of ``Pi_D v`` and ``grad_D v`` via point location."""

    def __init__(self, gd: GradientDiscretisation, v):
        self.gd = gd
        self.values = gd.local_values(v)
        self.grads = gd.cell_gradients(v)

    def _cells(self, x, y):
        pts = np.column_stack([np.ravel(x), np.ravel(y)])
        cells = self.gd.mesh.locate(pts)
        if np.any(cells < 0):
            raise ValueError("evaluation point outside the mesh")
        return pts, cells

    def __call__(self, x, y):
        shape = np.shape(x)
        pts, cells = self._cells(x, y)
        mesh = self.gd.mesh
        lam = np.empty((len(pts), 3))
        p = mesh.vertices[mesh.cells[cells]]
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            a = p[:, j] - pts
            b = p[:, k] - pts
            lam[:, i] = (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]) / (2.0 * mesh.areas[cells])
        vals = np.sum(self.values[cells] * (1.0 - 2.0 * lam), axis=1)
        return vals.reshape(shape)

    def gradient(self, x, y):
        shape = np.shape(x)
        _, cells = self._cells(x, y)
        g = self.grads[cells]
        return g[:, 0].reshape(shape), g[:, 1].reshape(shape)


class SpaceTimeField:
    """Piecewise-constant-in-time reconstruction of a sequence of DOF vectors.

    On ``(t^n, t^(n+1)]`` values and gradients come from level ``n+1``; the
    discrete time derivative there is ``(v^(n+1) - v^n) / dt``.
    """

    def __init__(self, gd: GradientDiscretisation, levels, time_grid: TimeGrid | None = None):
        self.gd = gd
        self.time_grid = time_grid if time_grid is not None else gd.time_grid
        levels = np.asarray(levels, dtype=float)
        if levels.ndim != 2 or levels.shape[1] != gd.n_dofs:
            raise ValueError("levels must have shape (N+1, n_dofs)")
        if len(levels) != self.time_grid.n_steps + 1:
            raise ValueError(
                f"expected {self.time_grid.n_steps + 1} levels, got {len(levels)}")
        self.levels = levels

    def level_at(self, t: float) -> int:
        if t == 0.0:
            return 0
        return self.time_grid.interval(t) + 1

    def dofs(self, t: float) -> np.ndarray:
        return self.levels[self.level_at(t)]

    def value(self, t, cell, point) -> float:
        return reconstruct_value(self.gd, self.dofs(t), cell, point)

    def gradient(self, t, cell) -> np.ndarray:
        return reconstruct_gradient(self.gd, self.dofs(t), cell)

    def increments(self) -> np.ndarray:
        """DOF vectors of the discrete derivative on each interval, shape (N, ndof)."""
        return np.diff(self.levels, axis=0) / self.time_grid.steps[:, None]

    def derivative(self, t: float) -> np.ndarray:
        return self.increments()[self.time_grid.interval(t)]

    def derivative_value(self, t, cell, point) -> float:
        return reconstruct_value(self.gd, self.derivative(t), cell, point)


def spacetime_field(gd: GradientDiscretisation, levels, time_grid: TimeGrid | None = None
                    ) -> SpaceTimeField:
    return SpaceTimeField(gd, levels, time_grid)
