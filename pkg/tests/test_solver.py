"""Sparse factorization, field state bookkeeping and the Picard driver."""
import json

import numpy as np
import pytest
import scipy.sparse as sp

from porovem.assembly import LocalSpaces, interpolate_state, number_dofs
from porovem.mesh import build_structured_quad, distort_quad, tag_boundary
from porovem.model import MaterialParams
from porovem.solver import (
    Factorization, FieldState, FixedPointConfig, PicardDriver, SolveReport, SolverError, increment_norm, picard,
    solve_sparse,
)
from porovem.verification import example1_boundary, example1_case, linear_case


def tagged_quad(n):
    return tag_boundary(build_structured_quad(n), example1_boundary)


# ── Linear solves ────────────────────────────────────────────────

def test_solve_small_system():
    a = sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
    x, res = solve_sparse(a, np.array([1.0, 2.0]))
    np.testing.assert_allclose(a @ x, [1.0, 2.0], rtol=1e-14)
    assert res < 1e-14


def test_zero_rhs_short_circuits():
    x, res = Factorization(sp.identity(4, format="csc")).solve(np.zeros(4))
    assert not x.any()
    assert res == 0.0


def test_empty_row_is_reported():
    a = sp.csr_matrix(np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 2.0]]))
    with pytest.raises(SolverError) as exc:
        Factorization(a, "probe")
    assert exc.value.rows == (1,)
    assert "rows 1" in str(exc.value)


def test_non_square_rejected():
    with pytest.raises(SolverError):
        Factorization(sp.csr_matrix(np.ones((2, 3))))


def test_rhs_shape_checked():
    with pytest.raises(SolverError):
        Factorization(sp.identity(3, format="csc")).solve(np.ones(2))


def test_singular_matrix_fails():
    a = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverError):
        solve_sparse(a, np.array([1.0, 0.0]))


# ── Field state and configuration ────────────────────────────────

def test_field_state_round_trip():
    mesh = tagged_quad(2)
    dmap = number_dofs(mesh, 1)
    state = FieldState.zeros(dmap)
    state.check(dmap)
    assert len(state.concatenate()) == dmap.n_biot + dmap.n_diffusion
    state.phi = np.zeros(5)
    with pytest.raises(ValueError):
        state.check(dmap)


@pytest.mark.parametrize("kwargs", [{"tol": 0.0}, {"max_iter": 0}, {"norm": "max"}])
def test_fixed_point_config_validation(kwargs):
    with pytest.raises(ValueError):
        FixedPointConfig(**kwargs)


def test_increment_norm_modes():
    mesh = tagged_quad(1)
    dmap = number_dofs(mesh, 1)
    a, b = FieldState.zeros(dmap), FieldState.zeros(dmap)
    a.phi[:] = 3.0
    a.u[:] = 4.0
    phi_only = FixedPointConfig(norm="phi")
    assert increment_norm(a, b, phi_only) == pytest.approx(3.0 * np.sqrt(len(a.phi)))
    assert increment_norm(a, b, FixedPointConfig(relative=True)) == pytest.approx(1.0)


def test_report_ratios():
    report = SolveReport(increments=[1.0, 0.5, 0.1])
    assert report.contraction_ratios == pytest.approx([0.5, 0.2])
    assert report.final_increment == 0.1
    assert report.as_dict()["iterations"] == 0


# ── Picard ───────────────────────────────────────────────────────

@pytest.mark.parametrize("distorted", [False, True], ids=["quad", "distorted"])
def test_affine_case_is_reproduced(distorted):
    case = linear_case()
    mesh = build_structured_quad(3)
    if distorted:
        mesh = distort_quad(mesh, 0.03, seed=2)
    mesh = tag_boundary(mesh, case.predicate)
    dmap = number_dofs(mesh, 1)
    spaces = LocalSpaces(mesh, 1, case.params)
    state, report = picard(mesh, dmap, case.params, case, FixedPointConfig(tol=1e-10), spaces)
    assert report.converged
    exact = interpolate_state(mesh, dmap, spaces, case)
    for name, values in state.as_dict().items():
        scale = max(np.abs(exact[name]).max(), 1.0)
        np.testing.assert_allclose(values, exact[name], atol=1e-8 * scale, err_msg=name)


def test_decoupled_problem_converges_in_two_sweeps():
    params = MaterialParams(beta=0.0, eta1=0.0)
    case = example1_case(params)
    mesh = tagged_quad(2)
    dmap = number_dofs(mesh, 1)
    _, report = picard(mesh, dmap, params, case, FixedPointConfig(tol=1e-12))
    assert report.converged
    assert report.iterations == 2
    assert report.increments[-1] <= 1e-12


def test_picard_logs_each_iteration(tmp_path):
    params = MaterialParams()
    case = example1_case(params)
    mesh = tagged_quad(2)
    dmap = number_dofs(mesh, 1)
    events = tmp_path / "events.jsonl"
    state, report = picard(mesh, dmap, params, case, FixedPointConfig(tol=1e-9, max_iter=60), events_path=events)
    assert report.converged
    assert report.phi_hat is not None
    assert report.max_linear_residual < 1e-8
    lines = [json.loads(line) for line in events.read_text().splitlines()]
    assert len(lines) == report.iterations
    assert {"ts", "type", "iteration", "increment"} <= set(lines[0])
    assert np.isfinite(state.concatenate()).all()


def test_default_tolerance_reached_with_contracting_increments():
    params = MaterialParams()
    case = example1_case(params)
    mesh = tagged_quad(4)
    dmap = number_dofs(mesh, 1)
    _, report = picard(mesh, dmap, params, case, FixedPointConfig())
    assert report.converged
    assert report.iterations <= 5
    # increments from the second iteration on may not grow by more than 10%
    assert all(r <= 1.1 for r in report.contraction_ratios[1:]), report.contraction_ratios


def test_iteration_cap_returns_best_iterate(caplog):
    params = MaterialParams()
    case = example1_case(params)
    mesh = tagged_quad(2)
    dmap = number_dofs(mesh, 1)
    _, report = picard(mesh, dmap, params, case, FixedPointConfig(tol=1e-14, max_iter=2))
    assert not report.converged
    assert report.iterations == 2
    assert "did not converge" in caplog.text


def test_biot_factorized_once():
    case = linear_case()
    mesh = tag_boundary(build_structured_quad(2), case.predicate)
    dmap = number_dofs(mesh, 1)
    driver = PicardDriver(mesh, dmap, case.params, case)
    driver.sweep(np.zeros(dmap.sizes["phi"]))
    factor = driver._biot_factor
    driver.sweep(np.ones(dmap.sizes["phi"]))
    assert driver._biot_factor is factor


def test_initial_phi_is_used():
    case = linear_case()
    mesh = tag_boundary(build_structured_quad(2), case.predicate)
    dmap = number_dofs(mesh, 1)
    guess = np.full(dmap.sizes["phi"], 0.25)
    _, report = picard(mesh, dmap, case.params, case, FixedPointConfig(initial_phi=guess))
    assert report.initial_guess == "given"
    with pytest.raises(ValueError):
        picard(mesh, dmap, case.params, case, FixedPointConfig(initial_phi=np.zeros(2)))
