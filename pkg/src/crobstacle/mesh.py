"""Conforming triangulations: construction, red refinement, queries and text IO.

Local numbering convention used throughout the package: local edge ``i`` of a
cell is the edge opposite local vertex ``i``.  The Crouzeix-Raviart basis
function attached to that edge is ``1 - 2*lambda_i``.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np


class Mesh:
    """Immutable triangle mesh with edge connectivity.

    Parameters
    ----------
    vertices : (V, 2) array of coordinates
    cells : (C, 3) array of vertex indices, counter-clockwise

    Derived attributes (all read-only arrays):

    ``edges`` (E, 2)
        sorted vertex pairs in lexicographic order (canonical numbering)
    ``edge_cells`` (E, 2)
        adjacent cells, ``-1`` in the second slot for boundary edges
    ``edge_midpoints`` (E, 2), ``edge_lengths`` (E,), ``boundary`` (E,) bool
    ``cell_edges`` (C, 3)
        edge index of local edge i (opposite local vertex i)
    ``cell_normals`` (C, 3, 2)
        outward unit normal of local edge i
    ``areas`` (C,)
        signed areas (positive for valid meshes)
    """

    def __init__(self, vertices, cells):
        vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        cells = np.array(cells, dtype=np.int64).reshape(-1, 3)
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise ValueError("cell references a vertex index out of range")

        p = vertices[cells]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        if np.any(areas <= 0.0):
            bad = int(np.argmax(areas <= 0.0))
            raise ValueError(f"cell {bad} has non-positive signed area {areas[bad]:.3e}")

        local = np.stack([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]], axis=1)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        cell_edges = inverse.reshape(-1, 3)

        n_edges = len(edges)
        counts = np.bincount(inverse, minlength=n_edges)
        if np.any(counts > 2):
            raise ValueError("non-manifold mesh: an edge is shared by more than two cells")
        edge_cells = np.full((n_edges, 2), -1, dtype=np.int64)
        owner = np.repeat(np.arange(len(cells)), 3)
        order = np.argsort(inverse, kind="stable")
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        sorted_edges = inverse[order]
        slot = np.arange(len(order)) - starts[sorted_edges]
        edge_cells[sorted_edges, slot] = owner[order]

        ev = vertices[edges]
        midpoints = 0.5 * (ev[:, 0] + ev[:, 1])
        lengths = np.linalg.norm(ev[:, 1] - ev[:, 0], axis=1)

        grads = barycentric_gradients(vertices, cells, areas)
        norms = np.linalg.norm(grads, axis=2, keepdims=True)
        normals = -grads / norms

        self.vertices = vertices
        self.cells = cells
        self.edges = edges
        self.edge_cells = edge_cells
        self.edge_midpoints = midpoints
        self.edge_lengths = lengths
        self.boundary = counts == 1
        self.cell_edges = cell_edges
        self.cell_normals = normals
        self.areas = areas
        self.lambda_gradients = grads
        for arr in (self.vertices, self.cells, self.edges, self.edge_cells,
                    self.edge_midpoints, self.edge_lengths, self.boundary,
                    self.cell_edges, self.cell_normals, self.areas,
                    self.lambda_gradients):
            arr.flags.writeable = False
        self._locator = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def cell_diameters(self) -> np.ndarray:
        p = self.vertices[self.cells]
        d = [np.linalg.norm(p[:, i] - p[:, j], axis=1) for i, j in ((0, 1), (1, 2), (2, 0))]
        return np.max(d, axis=0)

    def barycentric(self, cell: int, point) -> np.ndarray:
        """Barycentric coordinates of ``point`` with respect to ``cell``."""
        p = self.vertices[self.cells[cell]]
        x = np.asarray(point, dtype=float)
        lam = np.empty(3)
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            lam[i] = _cross(p[j] - x, p[k] - x) / (2.0 * self.areas[cell])
        return lam

    def locate(self, points, tol: float = 1e-10) -> np.ndarray:
        """Index of a cell containing each point, -1 when outside the mesh."""
        if self._locator is None:
            self._locator = CellLocator(self)
        return self._locator.locate(points, tol=tol)

    def __repr__(self):
        return f"Mesh(V={self.n_vertices}, C={self.n_cells}, E={self.n_edges})"


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


def barycentric_gradients(vertices, cells, areas=None) -> np.ndarray:
    """Constant gradients of the three barycentric coordinates, shape (C, 3, 2)."""
    p = vertices[cells]
    if areas is None:
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        areas = 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    grads = np.empty((len(cells), 3, 2))
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = p[:, j, 1] - p[:, k, 1]
        grads[:, i, 1] = p[:, k, 0] - p[:, j, 0]
    return grads / (2.0 * areas)[:, None, None]


class CellLocator:
    """Bucket-grid point location for triangle meshes."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        nb = max(1, int(np.sqrt(mesh.n_cells / 2.0)))
        self.lo = lo
        self.width = np.where(hi > lo, (hi - lo) / nb, 1.0)
        self.nb = nb

        p = mesh.vertices[mesh.cells]
        cmin = self._bucket(p.min(axis=1))
        cmax = self._bucket(p.max(axis=1))
        buckets = [[] for _ in range(nb * nb)]
        for c in range(mesh.n_cells):
            for bx in range(cmin[c, 0], cmax[c, 0] + 1):
                for by in range(cmin[c, 1], cmax[c, 1] + 1):
                    buckets[bx * nb + by].append(c)
        width = max(len(b) for b in buckets)
        table = np.full((nb * nb, width), -1, dtype=np.int64)
        for i, b in enumerate(buckets):
            table[i, :len(b)] = b
        self.table = table

    def _bucket(self, pts):
        idx = np.floor((pts - self.lo) / self.width).astype(np.int64)
        return np.clip(idx, 0, self.nb - 1)

    def locate(self, points, tol=1e-10):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        b = self._bucket(pts)
        cand = self.table[b[:, 0] * self.nb + b[:, 1]]
        valid = cand >= 0
        safe = np.where(valid, cand, 0)
        mesh = self.mesh
        v = mesh.vertices[mesh.cells[safe]]
        x = pts[:, None, :]
        lam_min = np.full(cand.shape, np.inf)
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            a = v[:, :, j] - x
            c = v[:, :, k] - x
            lam = (a[..., 0] * c[..., 1] - a[..., 1] * c[..., 0]) / (2.0 * mesh.areas[safe])
            lam_min = np.minimum(lam_min, lam)
        lam_min = np.where(valid, lam_min, -np.inf)
        best = np.argmax(lam_min, axis=1)
        rows = np.arange(len(pts))
        found = lam_min[rows, best] >= -tol
        return np.where(found, cand[rows, best], -1)


def build_structured_triangulation(n: int) -> Mesh:
    """Uniform n x n triangulation of the unit square.

    Each square is cut by its lower-left to upper-right diagonal.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"cells per side must be a positive integer, got {n!r}")
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    x, y = np.meshgrid(t, t)
    vertices = np.column_stack([x.ravel(), y.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = lower
    cells[1::2] = upper
    return Mesh(vertices, cells)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into 4 similar children."""
    nv = mesh.n_vertices
    vertices = np.vstack([mesh.vertices, mesh.edge_midpoints])
    v0, v1, v2 = mesh.cells.T
    m0, m1, m2 = (nv + mesh.cell_edges).T
    children = np.stack([
        np.column_stack([v0, m2, m1]),
        np.column_stack([m2, v1, m0]),
        np.column_stack([m1, m0, v2]),
        np.column_stack([m0, m1, m2]),
    ], axis=1).reshape(-1, 3)
    return Mesh(vertices, children)


def mesh_size(mesh: Mesh) -> float:
    """Maximum cell diameter."""
    if mesh.n_cells == 0:
        return 0.0
    return float(mesh.cell_diameters().max())


def check_invariants(mesh: Mesh, area: float | None = None, tol: float = 1e-12) -> list[str]:
    """Return a list of violated structural invariants (empty when valid)."""
    problems = []
    n_adj = (mesh.edge_cells >= 0).sum(axis=1)
    if np.any(n_adj[mesh.boundary] != 1) or np.any(n_adj[~mesh.boundary] != 2):
        problems.append("edge adjacency count")
    if np.any(mesh.areas <= 0):
        problems.append("non-positive cell area")
    if mesh.n_vertices - mesh.n_edges + mesh.n_cells != 1:
        problems.append("Euler relation V - E + C = 1")
    ev = mesh.vertices[mesh.edges]
    if not np.allclose(mesh.edge_midpoints, 0.5 * (ev[:, 0] + ev[:, 1]), rtol=0, atol=tol):
        problems.append("edge midpoints")
    if area is not None and abs(mesh.areas.sum() - area) > tol:
        problems.append("total area")
    interior = np.flatnonzero(~mesh.boundary)
    for e in interior:
        normals = []
        for c in mesh.edge_cells[e]:
            k = int(np.flatnonzero(mesh.cell_edges[c] == e)[0])
            normals.append(mesh.cell_normals[c, k])
        if not np.allclose(normals[0], -normals[1], rtol=0, atol=tol):
            problems.append(f"normals of interior edge {e} not opposite")
            break
    return problems


def write_mesh(mesh: Mesh, path) -> None:
    """Plain-text format: header ``V C E``, vertex lines ``x y``, cell lines ``i j k``."""
    lines = [f"{mesh.n_vertices} {mesh.n_cells} {mesh.n_edges}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    rows = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 3:
        raise ValueError(f"{path}: line 1: expected header 'V C E'")
    nv, nc, ne = (int(s) for s in rows[0])
    if len(rows) != 1 + nv + nc:
        raise ValueError(f"{path}: expected {1 + nv + nc} records, found {len(rows)}")
    vertices = np.array([[float(s) for s in r] for r in rows[1:1 + nv]])
    cells = np.array([[int(s) for s in r] for r in rows[1 + nv:]], dtype=np.int64)
    mesh = Mesh(vertices, cells)
    if mesh.n_edges != ne:
        raise ValueError(f"{path}: header declares {ne} edges, mesh has {mesh.n_edges}")
    return mesh
