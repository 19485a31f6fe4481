"""Local Hellinger-Reissner stress space: DoFs, divergence, C-energy projection, blocks."""
import numpy as np
import pytest

from porovem.hr_space import (
    HRDofLayout, HRLocalSpace, hr_divergence, hr_interpolate, hr_local_A, hr_local_B_div, hr_local_D, hr_project,
    s1_stabilization, s1_trace_factor,
)
from porovem.model import MaterialParams, compliance_trace, stiffness_trace
from porovem.polybasis import as_vector_mk, dim_p, rbm_set, tensor_divergence

from tests.conftest import CELLS, make_workspace, project_vector


def cubic_stress(x):
    x1, x2 = x[:, 0], x[:, 1]
    return np.stack([x1 ** 3 + x2, x1 * x2 ** 2, x1 ** 2 * x2 - x2 ** 3], axis=-1)


def cubic_stress_div(x):
    x1, x2 = x[:, 0], x[:, 1]
    return np.stack([3 * x1 ** 2 + 2 * x1 * x2, x1 ** 2 - 2 * x2 ** 2], axis=-1)


def constant_stress(x):
    return np.tile([0.7, -0.2, 1.3], (len(x), 1))


def identity_stress(x):
    return np.tile([1.0, 0.0, 1.0], (len(x), 1))


# ── Layout ───────────────────────────────────────────────────────

@pytest.mark.parametrize("k,n_edges", [(1, 3), (1, 4), (2, 6)])
def test_dof_count(k, n_edges):
    lay = HRDofLayout(k, n_edges)
    assert lay.n_dofs == 2 * (k + 1) * n_edges + 2 * dim_p(k) - 3
    assert lay.index(n_edges - 1, 1, k) == lay.n_edge_dofs - 1


# ── Divergence ───────────────────────────────────────────────────

@pytest.mark.parametrize("k", [1, 2])
def test_constant_stress_is_divergence_free(cell_name, hr_factory, k):
    hr = hr_factory(cell_name, k)
    div = hr.divergence(hr.interpolate(constant_stress))
    assert np.abs(div).max() <= 1e-10


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("with_div", [True, False], ids=["div-given", "boundary-route"])
def test_commuting_divergence(cell_name, hr_factory, k, with_div):
    hr = hr_factory(cell_name, k)
    dofs = hr.interpolate(cubic_stress, cubic_stress_div if with_div else None)
    expected = project_vector(hr.ws, cubic_stress_div)
    np.testing.assert_allclose(hr.divergence(dofs), expected, rtol=1e-10, atol=1e-10 * np.abs(expected).max())


def test_divergence_of_tilde_fields(hr_factory):
    hr = hr_factory("pentagon", 2)
    ws = hr.ws
    exact = as_vector_mk(tensor_divergence(hr.tensors, ws.h, ws.degree), ws.k)
    np.testing.assert_allclose((hr.div_matrix @ hr.tilde_dofs).T, exact, atol=1e-10 * np.abs(exact).max())


def test_single_edge_traction_matches_boundary_integral(hr_factory):
    hr = hr_factory("pentagon", 1)
    ws = hr.ws
    rng = np.random.default_rng(2)
    dofs = np.zeros(hr.n_dofs)
    dofs[hr.layout.edge_slice(2)] = rng.standard_normal(hr.layout.per_edge)
    rbm = rbm_set(ws.h, ws.degree)
    div = hr.divergence(dofs)
    moments = as_vector_mk(rbm, ws.k) @ ws.vec_mass @ div
    np.testing.assert_allclose(moments, hr.boundary_pairing(rbm) @ dofs, rtol=1e-10, atol=1e-11)


# ── Projection ───────────────────────────────────────────────────

@pytest.mark.parametrize("k", [1, 2])
def test_projection_is_identity_on_tilde(cell_name, hr_factory, k):
    hr = hr_factory(cell_name, k)
    np.testing.assert_allclose(hr.project(hr.tilde_dofs), np.eye(len(hr.tensors)), atol=1e-10)


@pytest.mark.parametrize("k", [1, 2])
def test_identity_stress_reproduced(cell_name, hr_factory, k):
    hr = hr_factory(cell_name, k)
    proj = hr.project(hr.interpolate(identity_stress))
    np.testing.assert_allclose(hr.stress_values(proj), identity_stress(hr.ws.rule.points), atol=1e-11)


def test_trace_values_of_identity(hr_factory):
    hr = hr_factory("square", 1)
    proj = hr.project(hr.interpolate(identity_stress))
    np.testing.assert_allclose(hr.trace_values(proj), 2.0, atol=1e-11)


# ── Local blocks ─────────────────────────────────────────────────

@pytest.mark.parametrize("k", [1, 2])
def test_local_A_symmetric_psd(cell_name, hr_factory, k):
    a = hr_factory(cell_name, k).local_A()
    np.testing.assert_allclose(a, a.T, rtol=1e-13, atol=1e-13 * np.abs(a).max())
    x = np.random.default_rng(k).standard_normal((100, len(a)))
    quad = np.einsum("ni,ij,nj->n", x, a, x)
    assert quad.min() >= -1e-12 * np.einsum("ni,ni->n", x, x).max()


def test_local_A_consistency_on_tilde(hr_factory):
    hr = hr_factory("pentagon", 1)
    n = hr.n_dofs
    block = hr.tilde_dofs.T @ hr.local_A()[:n, :n] @ hr.tilde_dofs
    np.testing.assert_allclose(block, hr.gram, rtol=1e-10, atol=1e-10 * np.abs(hr.gram).max())


def test_local_A_coercive_on_divergence_kernel(cell_name, hr_factory):
    hr = hr_factory(cell_name, 1)
    _, s, vt = np.linalg.svd(hr.div_matrix)
    rank = int((s > 1e-10 * s[0]).sum())
    kernel = vt[rank:].T
    assert kernel.shape[1] > 0
    n = hr.n_dofs
    restricted = kernel.T @ hr.local_A()[:n, :n] @ kernel
    assert np.linalg.eigvalsh(restricted).min() > 0.0


def test_stabilization_psd_and_kernel(cell_name, hr_factory):
    hr = hr_factory(cell_name, 2)
    s = hr.stabilization
    assert np.linalg.eigvalsh(0.5 * (s + s.T)).min() >= -1e-12 * np.abs(s).max()
    assert np.abs(s @ hr.tilde_dofs).max() <= 1e-9 * max(np.abs(s).max(), 1.0)


def test_stabilization_prefactor_scales_with_h():
    verts = np.asarray(CELLS["square"], dtype=float)
    small = HRLocalSpace(make_workspace(verts, 1), MaterialParams())
    large = HRLocalSpace(make_workspace(2 * verts, 1), MaterialParams())
    assert large.s1_prefactor == pytest.approx(2 * small.s1_prefactor)


def test_stabilization_trace_choice():
    p = MaterialParams(mu=0.5, lam=10.0)
    ws = make_workspace(CELLS["square"], 1)
    soft = HRLocalSpace(ws, p, "compliance")
    stiff = HRLocalSpace(ws, p, "stiffness")
    assert stiff.s1_prefactor / soft.s1_prefactor == pytest.approx(stiffness_trace(p) / compliance_trace(p))
    with pytest.raises(ValueError):
        s1_trace_factor(p, "frobenius")


def test_local_B_constant_row_is_boundary_traction(hr_factory):
    hr = hr_factory("pentagon", 1)
    ws = hr.ws
    b = hr.local_B_div()
    pairing = hr.boundary_pairing(rbm_set(ws.h, ws.degree))
    np.testing.assert_allclose(b[0], ws.h * pairing[0], atol=1e-10 * np.abs(b).max())
    np.testing.assert_allclose(b[ws.n_k], ws.h * pairing[1], atol=1e-10 * np.abs(b).max())


def test_local_B_against_quadrature(hr_factory):
    hr = hr_factory("hexagon", 1)
    ws = hr.ws
    dofs = hr.interpolate(cubic_stress, cubic_stress_div)
    div = hr.divergence(dofs)
    nk = ws.n_k
    scalar = ws.values[:, :nk]
    div_vals = np.stack([scalar @ div[:nk], scalar @ div[nk:]], axis=-1)
    v = np.random.default_rng(5).standard_normal(2 * nk)
    v_vals = np.stack([scalar @ v[:nk], scalar @ v[nk:]], axis=-1)
    assert v @ hr.local_B_div() @ dofs == pytest.approx(ws.integrate(np.einsum("qc,qc->q", v_vals, div_vals)),
                                                        rel=1e-10)


def test_local_D_zero_without_beta():
    ws = make_workspace(CELLS["triangle"], 1)
    hr = HRLocalSpace(ws, MaterialParams(beta=0.0))
    assert np.abs(hr.local_D()).max() == 0.0


def test_operation_wrappers(hr_factory):
    hr = hr_factory("square", 1)
    np.testing.assert_array_equal(hr_interpolate(hr, constant_stress), hr.interpolate(constant_stress))
    dofs = hr.interpolate(cubic_stress, cubic_stress_div)
    np.testing.assert_array_equal(hr_divergence(hr, dofs), hr.divergence(dofs))
    np.testing.assert_array_equal(hr_project(hr, dofs), hr.project(dofs))
    np.testing.assert_array_equal(hr_local_A(hr), hr.local_A())
    np.testing.assert_array_equal(s1_stabilization(hr), hr.stabilization)
    np.testing.assert_array_equal(hr_local_B_div(hr), hr.local_B_div())
    np.testing.assert_array_equal(hr_local_D(hr), hr.local_D())
