"""Perturbed saddle-point validator: hypotheses, a priori bounds, Theta, negative probe."""
import json

import numpy as np
import pytest

from porovem.abstract_saddle import (
    HypothesisError, PerturbedSaddleInstance, check_hypotheses, classical_constants, hypothesis_probe,
    random_instance, run_trials, solve_perturbed, theorem_constants, verify_theorem,
)


def simple_instance(**changes):
    data = dict(A=np.eye(2), B=np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]]), C=np.diag([1.0, 2.0, 4.0]),
                F=np.array([1.0, -1.0]), G=np.array([0.5, 0.0, 2.0]))
    data.update(changes)
    return PerturbedSaddleInstance(**data)


# ── Hypotheses ───────────────────────────────────────────────────

@pytest.mark.parametrize("seed", range(5))
def test_random_instances_satisfy_hypotheses(seed):
    check_hypotheses(random_instance(3 + seed, 5 + seed, seed))


def test_random_instance_requires_n_le_m():
    with pytest.raises(ValueError):
        random_instance(5, 3)


def test_indefinite_A_rejected():
    with pytest.raises(HypothesisError, match="semi-definite"):
        check_hypotheses(simple_instance(A=np.diag([1.0, -1.0])))


def test_non_injective_B_rejected():
    with pytest.raises(HypothesisError, match="injective"):
        check_hypotheses(simple_instance(B=np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])))


def test_asymmetric_C_rejected():
    c = np.diag([1.0, 2.0, 4.0])
    c[0, 1] = 0.5
    with pytest.raises(HypothesisError, match="symmetric"):
        check_hypotheses(simple_instance(C=c))


def test_singular_C_rejected():
    with pytest.raises(HypothesisError, match="positive definite"):
        check_hypotheses(simple_instance(C=np.diag([1.0, 0.0, 4.0])))


def test_load_shapes_checked():
    with pytest.raises(HypothesisError):
        check_hypotheses(simple_instance(G=np.zeros(2)))


# ── Constants and bounds ─────────────────────────────────────────

def test_constants_of_diagonal_instance():
    inst = simple_instance()
    assert (inst.gamma, inst.c_norm) == (pytest.approx(1.0), pytest.approx(4.0))
    assert (inst.beta_hat, inst.b_norm) == (pytest.approx(1.0), pytest.approx(2.0))
    consts = theorem_constants(inst)
    assert consts["sigma_F"] == pytest.approx(16.0)
    assert consts["alpha_theta"] == pytest.approx(1.0 / 16.0)
    assert consts["u_G"] == pytest.approx(4.0 * 16.0 + 1.0)


def test_solution_solves_block_system():
    inst = random_instance(4, 7, seed=3)
    sigma, u = solve_perturbed(inst)
    np.testing.assert_allclose(inst.A @ sigma + inst.B.T @ u, inst.F, atol=1e-10)
    np.testing.assert_allclose(inst.B @ sigma - inst.C @ u, inst.G, atol=1e-10)


@pytest.mark.parametrize("n,m", [(1, 1), (3, 3), (4, 9), (10, 25), (20, 40)])
def test_theorem_holds(n, m):
    report = verify_theorem(random_instance(n, m, seed=n + m), trials=20, directions=200, seed=1)
    assert report.passed, report.summary()
    assert report.bounds_checked == 20
    assert report.via_theta_gap <= 1e-8 * max(1.0, report.sigma_norm + report.u_norm)
    json.dumps(report.as_dict())


def test_zero_A_still_well_posed():
    inst = random_instance(5, 8, seed=11)
    inst = PerturbedSaddleInstance(np.zeros((5, 5)), inst.B, inst.C, inst.F, inst.G)
    report = verify_theorem(inst, trials=5, directions=100)
    assert report.passed
    assert classical_constants(inst)["classical_applicable"] is False


def test_classical_theory_applies_to_square_b():
    info = classical_constants(simple_instance(B=np.eye(3)[:, :2], C=np.eye(3)))
    assert info["classical_inf_sup"] == 0.0
    square = PerturbedSaddleInstance(np.eye(2), np.array([[2.0, 0.0], [0.0, 1.0]]), np.eye(2), np.ones(2), np.ones(2))
    info = classical_constants(square)
    assert info["kernel_dim"] == 0
    assert info["classical_applicable"] is True


# ── Probe and batches ────────────────────────────────────────────

def test_probe_violating_C_is_singular():
    probe = hypothesis_probe(4, 6)
    assert probe.hypothesis_error
    assert probe.singular
    assert probe.null_residual <= 1e-10


def test_probe_widens_m():
    assert hypothesis_probe(3, 3, seed=2).singular


def test_hundred_trials_pass(tmp_path):
    events = tmp_path / "saddle.jsonl"
    reports = run_trials(100, max_dim=40, seed=0, directions=200, events_path=events)
    assert len(reports) == 100
    assert all(r.passed for r in reports)
    lines = events.read_text().splitlines()
    assert len(lines) == 100
    assert json.loads(lines[0])["type"] == "saddle_trial"
