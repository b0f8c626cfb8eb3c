"""Text output: legacy VTK snapshots, edge sidecars, DOF vectors, CSV tables."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .discretisation import GradientDiscretisation


def write_vtk(path, mesh, cell_data: dict, title: str = "crobstacle") -> None:
    """Legacy ASCII unstructured grid with per-cell scalar fields."""
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double"]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices.tolist()]
    lines.append(f"CELLS {mesh.n_cells} {4 * mesh.n_cells}")
    lines += [f"3 {i} {j} {k}" for i, j, k in mesh.cells.tolist()]
    lines.append(f"CELL_TYPES {mesh.n_cells}")
    lines += ["5"] * mesh.n_cells
    if cell_data:
        lines.append(f"CELL_DATA {mesh.n_cells}")
        for name, values in cell_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (mesh.n_cells,):
                raise ValueError(f"cell field {name!r} has shape {values.shape}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [f"{v:.17g}" for v in values.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_snapshot(directory, index: int, gd: GradientDiscretisation, fields: dict,
                   time: float) -> None:
    """VTK file with barycenter values of each CR field plus an edge-value sidecar CSV."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cell_data = {name: gd.cell_means(v) for name, v in fields.items()}
    write_vtk(directory / f"snapshot_{index:04d}.vtk", gd.mesh, cell_data,
              title=f"t={time:.12g}")
    mid = gd.mesh.edge_midpoints
    full = {name: gd.full(v) for name, v in fields.items()}
    with open(directory / f"edges_{index:04d}.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["edge", "x", "y", "boundary"] + list(fields))
        for e in range(gd.mesh.n_edges):
            wr.writerow([e, f"{mid[e, 0]:.12e}", f"{mid[e, 1]:.12e}", int(gd.mesh.boundary[e])]
                        + [f"{full[name][e]:.12e}" for name in fields])


def write_dofs(path, v) -> None:
    """One value per line in canonical (interior) edge order."""
    Path(path).write_text("".join(f"{x!r}\n" for x in np.asarray(v, dtype=float).tolist()))


def read_dofs(path) -> np.ndarray:
    return np.array([float(s) for s in Path(path).read_text().split()])


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([_fmt(v) for v in row])


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12e}"
    return v


def write_manifest(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
