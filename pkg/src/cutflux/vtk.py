"""Legacy ASCII VTK output for triangular meshes with cell and point fields."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from .mesh import Mesh

VTK_TRIANGLE = 5


def _fmt(a) -> str:
    return "\n".join(" ".join(f"{v:.10g}" for v in row) for row in np.atleast_2d(a))


def write_vtk(path, mesh: Mesh, cell_scalars: Optional[Mapping[str, np.ndarray]] = None,
              cell_vectors: Optional[Mapping[str, np.ndarray]] = None,
              point_scalars: Optional[Mapping[str, np.ndarray]] = None, title: str = "cutflux") -> Path:
    """Write an unstructured grid; vectors are 2D and padded with a zero z-component."""
    path = Path(path)
    nv, nc = mesh.n_vertices, mesh.n_cells
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID"]
    pts = np.hstack([mesh.vertices, np.zeros((nv, 1))])
    lines += [f"POINTS {nv} double", _fmt(pts)]
    conn = np.hstack([np.full((nc, 1), 3), mesh.cells])
    lines += [f"CELLS {nc} {4 * nc}", "\n".join(" ".join(map(str, r)) for r in conn)]
    lines += [f"CELL_TYPES {nc}", "\n".join([str(VTK_TRIANGLE)] * nc)]
    if cell_scalars or cell_vectors:
        lines.append(f"CELL_DATA {nc}")
        for name, vals in (cell_scalars or {}).items():
            vals = np.asarray(vals, dtype=float).reshape(nc)
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(vals[:, None])]
        for name, vals in (cell_vectors or {}).items():
            vals = np.asarray(vals, dtype=float).reshape(nc, 2)
            lines += [f"VECTORS {name} double", _fmt(np.hstack([vals, np.zeros((nc, 1))]))]
    if point_scalars:
        lines.append(f"POINT_DATA {nv}")
        for name, vals in point_scalars.items():
            vals = np.asarray(vals, dtype=float).reshape(nv)
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(vals[:, None])]
    path.write_text("\n".join(lines) + "\n")
    return path


def read_vtk_counts(path) -> dict:
    """Minimal reader returning the point and cell counts (used in tests)."""
    out = {}
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts and parts[0] in ("POINTS", "CELLS", "CELL_TYPES", "CELL_DATA", "POINT_DATA"):
            out[parts[0]] = int(parts[1])
    return out
