"""
Porovem — Field export.

One record per cell, evaluated at the cell barycentre: |Pi^C sigma_h| (Frobenius),
p_h, |u_h|, |Pi^0 z_h|, |Pi^0 zeta_h|, phi_h. Written as a legacy VTK polygon file
(meshio) and a CSV twin with the same rows.
"""

from __future__ import annotations

import logging
import pathlib
from typing import Dict, List, Optional, Union

import meshio
import numpy as np

from porovem.assembly import GlobalDofMap, LocalSpaces, gather
from porovem.mesh import PolyMesh
from porovem.polybasis import SYM_WEIGHTS
from porovem.solver import FieldState
from porovem.utils import write_text

log = logging.getLogger(__name__)

FIELD_COLUMNS = ("sigma_norm", "p", "u_norm", "z_norm", "zeta_norm", "phi")
CSV_COLUMNS = ("cell", "cx", "cy") + FIELD_COLUMNS
VTK_CELL_TYPES = {3: "triangle", 4: "quad"}


def cell_records(mesh: PolyMesh, dmap: GlobalDofMap, spaces: LocalSpaces,
                 state: FieldState) -> List[Dict[str, float]]:
    records = []
    for c in range(mesh.n_cells):
        cs = spaces[c]
        ws = cs.ws
        nk = ws.n_k
        x = ws.geometry.centroid[None, :]
        scalar = ws.big.values(x)[0, :nk]
        sigma = gather(state.sigma, dmap.cell_sigma[c], dmap.sign_sigma[c])
        s = cs.hr.stress_values(cs.hr.project(sigma), x)[0]
        u = state.u[dmap.cell_vector(c)]
        z = cs.hdiv.vector_values(cs.hdiv.project(gather(state.z, dmap.cell_flux[c], dmap.sign_flux[c])), x)[0]
        zeta = cs.hdiv.vector_values(
            cs.hdiv.project(gather(state.zeta, dmap.cell_flux[c], dmap.sign_flux[c])), x)[0]
        records.append({
            "cell": c,
            "cx": float(x[0, 0]),
            "cy": float(x[0, 1]),
            "sigma_norm": float(np.sqrt(s * s @ SYM_WEIGHTS)),
            "p": float(scalar @ state.p[dmap.cell_scalar(c)]),
            "u_norm": float(np.hypot(scalar @ u[:nk], scalar @ u[nk:])),
            "z_norm": float(np.linalg.norm(z)),
            "zeta_norm": float(np.linalg.norm(zeta)),
            "phi": float(scalar @ state.phi[dmap.cell_scalar(c)]),
        })
    return records


def records_to_csv(records: List[Dict[str, float]]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for rec in records:
        lines.append(",".join([str(int(rec["cell"]))] + [f"{rec[col]:.10e}" for col in CSV_COLUMNS[1:]]))
    return "\n".join(lines) + "\n"


def to_meshio(mesh: PolyMesh, records: Optional[List[Dict[str, float]]] = None) -> meshio.Mesh:
    """Cells grouped into blocks by vertex count; `cell` data keeps the original index."""
    points = np.column_stack([mesh.vertices, np.zeros(mesh.n_vertices)])
    groups: Dict[int, List[int]] = {}
    for c, cell in enumerate(mesh.cells):
        groups.setdefault(len(cell), []).append(c)
    blocks, order = [], []
    for size in sorted(groups):
        ids = groups[size]
        blocks.append(meshio.CellBlock(VTK_CELL_TYPES.get(size, "polygon"),
                                       np.array([list(mesh.cells[c]) for c in ids], dtype=np.int64)))
        order.append(ids)
    cell_data = {"cell": [np.array(ids, dtype=np.int64) for ids in order]}
    if records is not None:
        for col in FIELD_COLUMNS:
            cell_data[col] = [np.array([records[c][col] for c in ids]) for ids in order]
    return meshio.Mesh(points, blocks, cell_data=cell_data)


def export_fields(mesh: PolyMesh, dmap: GlobalDofMap, spaces: LocalSpaces, state: FieldState,
                  path: Union[str, pathlib.Path]) -> List[Dict[str, float]]:
    """Write `<path>.vtk` and `<path>.csv`; returns the per-cell records."""
    base = pathlib.Path(path)
    if base.suffix in (".vtk", ".csv"):
        base = base.with_suffix("")
    base.parent.mkdir(parents=True, exist_ok=True)
    records = cell_records(mesh, dmap, spaces, state)
    write_text(base.with_suffix(".csv"), records_to_csv(records))
    to_meshio(mesh, records).write(str(base.with_suffix(".vtk")), file_format="vtk", binary=False)
    log.info("fields exported: %s.{vtk,csv} (%d cells)", base, len(records))
    return records
