"""DoF numbering, local-space caching, global blocks and discrete conservation."""
import numpy as np
import pytest
import scipy.sparse as sp

from porovem.assembly import (
    BiotProblem, LocalSpaces, assemble_biot, assemble_diffusion, assemble_functionals, conservation_residuals,
    essential_values, gather, interpolate_state, local_biot_matrix, number_dofs, property_probes,
    reduce_system,
)
from porovem.hdiv_space import HdivLocalSpace
from porovem.hr_space import HRLocalSpace
from porovem.mesh import MeshError, build_structured_quad, build_triangular, distort_quad, tag_boundary
from porovem.model import MaterialParams
from porovem.polybasis import BasisWorkspace
from porovem.solver import solve_block
from porovem.verification import example1_boundary, linear_case


def tagged(mesh):
    return tag_boundary(mesh, example1_boundary)


@pytest.fixture
def quad2():
    return tagged(build_structured_quad(2))


# ── Numbering ────────────────────────────────────────────────────

def test_counts_k1(quad2):
    dmap = number_dofs(quad2, 1)
    assert dmap.counts() == {"sigma": 60, "p": 12, "u": 24, "z": 36, "zeta": 36, "phi": 12}
    assert dmap.n_biot == 60 + 12 + 24 + 36
    assert dmap.n_diffusion == 48


def test_counts_k2(quad2):
    dmap = number_dofs(quad2, 2)
    assert dmap.sizes["sigma"] == 6 * 12 + 9 * 4
    assert dmap.sizes["z"] == 3 * 12 + 8 * 4
    assert dmap.sizes["u"] == 2 * 6 * 4


def test_fixed_dofs_are_neumann_edges(quad2):
    dmap = number_dofs(quad2, 1)
    assert len(dmap.neumann_edges) == 4
    assert len(dmap.sigma_fixed) == 4 * dmap.sigma_edge
    assert len(dmap.biot_fixed()) == 4 * (dmap.sigma_edge + dmap.flux_edge)


def test_untagged_mesh_rejected():
    with pytest.raises(MeshError):
        number_dofs(build_structured_quad(2), 1)


def test_degree_zero_rejected(quad2):
    with pytest.raises(ValueError):
        number_dofs(quad2, 0)


def test_interior_edges_see_opposite_signs():
    mesh = tagged(build_triangular(2))
    dmap = number_dofs(mesh, 1)
    for e, cells in enumerate(mesh.edge_cells):
        if len(cells) != 2:
            continue
        signs = []
        for c in cells:
            pos = int(np.nonzero(dmap.cell_sigma[c] == e * dmap.sigma_edge)[0][0])
            signs.append(dmap.sign_sigma[c][pos])
        assert signs[0] == -signs[1]


def test_gather_applies_signs():
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(gather(x, np.array([2, 0]), np.array([-1.0, 1.0])), [-3.0, 1.0])


# ── Local spaces ─────────────────────────────────────────────────

def test_local_biot_matrix_symmetric():
    mesh = build_structured_quad(1)
    ws = BasisWorkspace(mesh.geometry(0), 1, mesh.cell_signs[0])
    params = MaterialParams()
    k = local_biot_matrix(HRLocalSpace(ws, params), HdivLocalSpace(ws), params)
    np.testing.assert_allclose(k, k.T, atol=1e-13 * np.abs(k).max())


def test_translates_share_matrices():
    mesh = build_structured_quad(3)
    params = MaterialParams()
    spaces = LocalSpaces(mesh, 1, params)
    assert len(spaces) == 9
    assert spaces.n_unique < mesh.n_cells
    for c in range(mesh.n_cells):
        ws = BasisWorkspace(mesh.geometry(c), 1, mesh.cell_signs[c])
        fresh = local_biot_matrix(HRLocalSpace(ws, params), HdivLocalSpace(ws), params)
        np.testing.assert_allclose(spaces[c].biot, fresh, atol=1e-10 * np.abs(fresh).max())


def test_translated_rule_sits_on_its_cell():
    mesh = build_structured_quad(3)
    spaces = LocalSpaces(mesh, 1, MaterialParams())
    for c in range(mesh.n_cells):
        geo = mesh.geometry(c)
        rule = spaces[c].ws.rule
        np.testing.assert_allclose(rule.integrate(rule.points) / geo.area, geo.centroid, atol=1e-13)


def test_distinct_cells_are_not_shared():
    mesh = distort_quad(build_structured_quad(3), 0.03, seed=4)
    assert LocalSpaces(mesh, 1, MaterialParams()).n_unique == mesh.n_cells


# ── Global blocks ────────────────────────────────────────────────

def test_global_biot_matrix_symmetric(quad2):
    dmap = number_dofs(quad2, 1)
    params = MaterialParams()
    spaces = LocalSpaces(quad2, 1, params)
    problem = BiotProblem(quad2, dmap, spaces, assemble_functionals(quad2, dmap, None, spaces),
                          essential_values(quad2, dmap, spaces, None))
    m = problem.matrix
    assert abs(m - m.T).max() <= 1e-12 * abs(m).max()
    with pytest.raises(ValueError):
        problem.system(np.zeros(3))


def test_functionals_vanish_without_case(quad2):
    dmap = number_dofs(quad2, 1)
    spaces = LocalSpaces(quad2, 1, MaterialParams())
    loads = assemble_functionals(quad2, dmap, None, spaces)
    assert not loads.biot().any()
    assert not loads.diffusion().any()
    assert len(loads.biot()) == dmap.n_biot


def test_unknown_essential_mode(quad2):
    dmap = number_dofs(quad2, 1)
    with pytest.raises(ValueError):
        essential_values(quad2, dmap, LocalSpaces(quad2, 1, MaterialParams()), None, mode="weak")


def test_diffusion_rejects_wrong_projection_count(quad2):
    dmap = number_dofs(quad2, 1)
    with pytest.raises(ValueError):
        assemble_diffusion(quad2, dmap, MaterialParams(), [np.zeros(9)])


def test_reduce_system_lifts_prescribed_values():
    k = sp.csr_matrix(np.array([[4.0, 1.0, 0.0], [1.0, 3.0, 1.0], [0.0, 1.0, 2.0]]))
    system = reduce_system(k, np.array([1.0, 2.0, 3.0]), np.array([2]), np.array([0.5]))
    np.testing.assert_array_equal(system.free, [0, 1])
    np.testing.assert_allclose(system.rhs, [1.0, 1.5])
    np.testing.assert_allclose(system.expand(np.array([7.0, 8.0])), [7.0, 8.0, 0.5])


def test_reduce_system_rejects_bad_constraints():
    k = sp.identity(3, format="csr")
    with pytest.raises(ValueError):
        reduce_system(k, np.zeros(3), np.array([1, 1]))
    with pytest.raises(ValueError):
        reduce_system(k, np.zeros(3), np.array([1]), np.array([0.0, 1.0]))


# ── Conservation and probes ──────────────────────────────────────

@pytest.mark.parametrize("mesh", [build_structured_quad(2), distort_quad(build_structured_quad(3), 0.03, seed=1),
                                  build_triangular(2)], ids=["quad", "distorted", "tri"])
def test_interpolated_affine_state_is_conservative(mesh):
    case = linear_case()
    mesh = tagged(mesh)
    dmap = number_dofs(mesh, 1)
    spaces = LocalSpaces(mesh, 1, case.params)
    fields = interpolate_state(mesh, dmap, spaces, case)
    res = conservation_residuals(mesh, dmap, spaces, case.params, fields, case)
    for name, values in res.items():
        assert values.shape == (mesh.n_cells,)
        assert values.max() <= 1e-10, name


def test_probes_on_small_mesh(quad2):
    dmap = number_dofs(quad2, 1)
    probes = property_probes(quad2, dmap, MaterialParams())
    assert probes["A_min_eig"] > 0.0
    assert probes["C_min_eig"] > 0.0
    assert probes["a_min_eig"] > 0.0
    assert probes["c_min_eig"] > 0.0
    assert probes["biot_inf_sup"] > 1e-3
    assert probes["diffusion_inf_sup"] > 1e-3


def test_assemble_biot_solves_free_rows():
    case = linear_case()
    mesh = tagged(build_structured_quad(2))
    dmap = number_dofs(mesh, 1)
    spaces = LocalSpaces(mesh, 1, case.params)
    phi = interpolate_state(mesh, dmap, spaces, case)["phi"]
    system = assemble_biot(mesh, dmap, case.params, phi, case, spaces, keep_full=True)
    assert len(system.free) + len(system.fixed) == dmap.n_biot
    assert system.matrix.shape == (len(system.free), len(system.free))
    x = solve_block(system)
    np.testing.assert_array_equal(x[system.fixed], system.fixed_values)
    residual = (system.full_matrix @ x - system.full_rhs)[system.free]
    scale = max(1.0, abs(system.full_matrix).max() * np.abs(x).max())
    assert np.abs(residual).max() <= 1e-9 * scale
