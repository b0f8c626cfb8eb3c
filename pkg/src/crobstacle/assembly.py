"""Sparse operators and load vectors of the CR gradient scheme.

Mass and reaction terms use the edge-midpoint rule, which is exact for
products of CR functions and makes the mass matrix diagonal.  Tensors are
sampled once per cell at the barycenter.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .discretisation import GradientDiscretisation
from .problem import TensorField, identity


def _index_map(gd: GradientDiscretisation, full: bool):
    if full:
        return gd.mesh.cell_edges, gd.mesh.n_edges
    return gd.cell_dofs, gd.n_dofs


def mass_diagonal(gd: GradientDiscretisation, full: bool = False) -> np.ndarray:
    """``sum_{K ni sigma} |K|/3`` per DOF (per edge when ``full``)."""
    idx, n = _index_map(gd, full)
    contrib = np.repeat(gd.mesh.areas / 3.0, 3).reshape(-1, 3)
    keep = idx >= 0
    return np.bincount(idx[keep], weights=contrib[keep], minlength=n)


def assemble_mass(gd: GradientDiscretisation, full: bool = False) -> sp.csr_matrix:
    return sp.diags(mass_diagonal(gd, full), format="csr")


def assemble_stiffness(gd: GradientDiscretisation, tensor: TensorField | None = None,
                       full: bool = False, cell_order=None) -> sp.csr_matrix:
    """``K_st = sum_K |K| (D(x_K) grad e^s) . grad e^t``; ``full`` keeps boundary edges.

    ``cell_order`` permutes the cell visiting order (results agree up to
    floating-point reassociation).
    """
    mesh = gd.mesh
    if tensor is None:
        tensor = identity()
    bary = mesh.barycenters
    tensor.check(bary)
    D = tensor(bary[:, 0], bary[:, 1])
    G = gd.basis_gradients
    DG = np.einsum("cde,cje->cjd", D, G)
    local = mesh.areas[:, None, None] * np.einsum("cid,cjd->cij", G, DG)
    iu, ju = np.triu_indices(3)
    upper = local[:, iu, ju]
    # mirror the upper triangle so symmetry is exact
    local = np.zeros_like(local)
    local[:, iu, ju] = upper
    local[:, ju, iu] = upper

    idx, n = _index_map(gd, full)
    if cell_order is not None:
        idx = idx[cell_order]
        local = local[cell_order]
    rows = np.repeat(idx, 3, axis=1).reshape(-1)
    cols = np.tile(idx, (1, 3)).reshape(-1)
    vals = local.reshape(-1)
    keep = (rows >= 0) & (cols >= 0)
    K = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    K.sum_duplicates()
    K.sort_indices()
    return K


def assemble_reaction_load(gd: GradientDiscretisation, f, a, b) -> np.ndarray:
    """``load_s = m_s f(a_s, b_s)`` with ``m`` the mass diagonal."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = gd._cache.get("mass")
    if m is None:
        m = gd._cache.setdefault("mass", mass_diagonal(gd))
    return m * np.broadcast_to(f(a, b), a.shape)


def identity_stiffness(gd: GradientDiscretisation) -> sp.csr_matrix:
    """Cached stiffness matrix with the identity tensor."""
    K = gd._cache.get("K1")
    if K is None:
        K = gd._cache.setdefault("K1", assemble_stiffness(gd))
    return K


def write_coo(matrix, path) -> None:
    """Write ``row col value`` lines (0-based indices)."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = [f"{r} {c} {v!r}" for r, c, v in
             zip(coo.row[order].tolist(), coo.col[order].tolist(), coo.data[order].tolist())]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_coo(path, shape) -> sp.csr_matrix:
    text = Path(path).read_text()
    if not text.strip():
        return sp.csr_matrix(shape)
    data = np.loadtxt(io.StringIO(text), ndmin=2)
    if data.size == 0:
        return sp.csr_matrix(shape)
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))),
                         shape=shape).tocsr()
