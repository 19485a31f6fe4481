"""Per-cell field export to VTK and CSV."""
import csv

import meshio
import numpy as np
import pytest

from porovem.assembly import LocalSpaces, interpolate_state, number_dofs
from porovem.export import CSV_COLUMNS, FIELD_COLUMNS, cell_records, export_fields, records_to_csv, to_meshio
from porovem.mesh import build_structured_quad, build_triangular, tag_boundary
from porovem.polybasis import SYM_WEIGHTS
from porovem.solver import FieldState
from porovem.verification import linear_case


def setup(mesh):
    case = linear_case()
    mesh = tag_boundary(mesh, case.predicate)
    dmap = number_dofs(mesh, 1)
    return case, mesh, dmap, LocalSpaces(mesh, 1, case.params)


def test_zero_state_has_zero_columns():
    _, mesh, dmap, spaces = setup(build_structured_quad(2))
    records = cell_records(mesh, dmap, spaces, FieldState.zeros(dmap))
    assert [r["cell"] for r in records] == [0, 1, 2, 3]
    for rec in records:
        assert all(rec[col] == 0.0 for col in FIELD_COLUMNS)


def test_interpolated_state_matches_fields_at_centroids():
    case, mesh, dmap, spaces = setup(build_structured_quad(2))
    state = FieldState(**interpolate_state(mesh, dmap, spaces, case))
    for rec in cell_records(mesh, dmap, spaces, state):
        x = np.array([[rec["cx"], rec["cy"]]])
        np.testing.assert_allclose(x[0], mesh.geometry(rec["cell"]).centroid)
        s = case.sigma(x)[0]
        assert rec["sigma_norm"] == pytest.approx(np.sqrt(s * s @ SYM_WEIGHTS), abs=1e-8)
        assert rec["p"] == pytest.approx(case.p(x)[0], abs=1e-10)
        assert rec["phi"] == pytest.approx(case.phi(x)[0], abs=1e-10)
        assert rec["u_norm"] == pytest.approx(np.linalg.norm(case.u(x)[0]), abs=1e-10)
        assert rec["z_norm"] == pytest.approx(np.linalg.norm(case.z(x)[0]), abs=1e-8)
        assert rec["zeta_norm"] == pytest.approx(np.linalg.norm(case.zeta(x)[0]), abs=1e-8)


def test_csv_layout():
    records = [{"cell": 0, "cx": 0.5, "cy": 0.5, **{col: 1.0 for col in FIELD_COLUMNS}}]
    lines = records_to_csv(records).splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[0].startswith("cell,cx,cy,sigma_norm")
    assert lines[1].split(",")[0] == "0"
    assert len(lines) == 2


def test_meshio_blocks_by_vertex_count():
    mesh = tag_boundary(build_triangular(2), linear_case().predicate)
    m = to_meshio(mesh)
    assert [block.type for block in m.cells] == ["triangle"]
    assert len(m.points) == mesh.n_vertices
    assert m.points.shape[1] == 3
    np.testing.assert_array_equal(m.cell_data["cell"][0], np.arange(mesh.n_cells))


def test_export_writes_both_files(tmp_path):
    case, mesh, dmap, spaces = setup(build_structured_quad(1))
    state = FieldState(**interpolate_state(mesh, dmap, spaces, case))
    records = export_fields(mesh, dmap, spaces, state, tmp_path / "out" / "fields.vtk")
    assert len(records) == 1

    with open(tmp_path / "out" / "fields.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 1
    assert tuple(rows[0]) == CSV_COLUMNS
    assert float(rows[0]["p"]) == pytest.approx(records[0]["p"], rel=1e-9)

    back = meshio.read(tmp_path / "out" / "fields.vtk")
    assert len(back.points) == 4
    assert sum(len(block.data) for block in back.cells) == 1
    assert float(np.ravel(back.cell_data["p"][0])[0]) == pytest.approx(records[0]["p"], rel=1e-9)
