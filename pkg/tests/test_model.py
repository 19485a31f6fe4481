"""Material parameters, constitutive maps and the stress-assisted diffusivity."""
import math

import numpy as np
import pytest

from porovem.model import (
    MaterialParams, ParameterError, SymTensor2, apply_C, apply_Cinv, bound_constants, compliance_trace,
    rho, rho_bounds, rho_inv, rho_inv_lipschitz, rho_prime, stiffness_trace,
)


@pytest.fixture
def params():
    return MaterialParams()


# ── Parameters ───────────────────────────────────────────────────

def test_defaults_are_unit_with_small_eta1(params):
    assert (params.mu, params.lam, params.alpha, params.beta, params.s0) == (1.0, 1.0, 1.0, 1.0, 1.0)
    assert params.eta1 == 1e-3
    assert params.lame_sum == 4.0


def test_kappa_bounds_sorted():
    p = MaterialParams(kappa=((2.0, 0.5), (0.5, 1.0)))
    k1, k2 = p.kappa_bounds
    assert 0 < k1 <= k2
    assert k1 + k2 == pytest.approx(3.0)
    assert k1 * k2 == pytest.approx(1.75)


@pytest.mark.parametrize("changes", [
    {"mu": 0.0},
    {"lam": -1.0},
    {"s0": -1e-3},
    {"rho0": 0.0},
    {"eta0": -1.0},
    {"eta1": -1.0},
    {"kappa": ((1.0, 2.0), (2.0, 1.0))},
    {"kappa": ((1.0, 0.3), (0.0, 1.0))},
])
def test_invalid_parameters(changes):
    with pytest.raises(ParameterError):
        MaterialParams(**changes)


def test_with_updates_revalidates(params):
    assert params.with_updates(lam=1e6).lam == 1e6
    with pytest.raises(ParameterError):
        params.with_updates(mu=-1.0)


def test_as_dict_uses_public_names(params):
    d = params.as_dict()
    assert d["lambda"] == 1.0
    assert {"kappa11", "kappa12", "kappa22", "eta1"} <= set(d)


# ── Constitutive maps ────────────────────────────────────────────

def test_c_of_identity(params):
    out = apply_C(params, SymTensor2(1.0, 0.0, 1.0))
    assert out == SymTensor2(4.0, 0.0, 4.0)


def test_cinv_inverts_c():
    rng = np.random.default_rng(0)
    p = MaterialParams(mu=0.7, lam=3.2)
    eps = rng.standard_normal((50, 3))
    np.testing.assert_allclose(apply_Cinv(p, apply_C(p, eps)), eps, rtol=1e-13, atol=1e-14)


def test_cinv_on_deviatoric(params):
    sig = SymTensor2(1.5, -0.4, -1.5)
    out = apply_Cinv(params, sig)
    np.testing.assert_allclose(out.as_array(), sig.as_array() / 2.0)


def test_cinv_is_positive():
    rng = np.random.default_rng(1)
    p = MaterialParams(mu=0.3, lam=1e6)
    for s in rng.standard_normal((20, 3)):
        sig = SymTensor2(*s)
        assert sig.ddot(apply_Cinv(p, sig)) > 0.0


def test_trace_identity():
    p = MaterialParams(mu=0.8, lam=2.5)
    sig = np.array([0.3, 0.9, -1.2])
    c = 0.7
    shifted = sig + np.array([c, 0.0, c])
    out = apply_Cinv(p, shifted)
    assert out[0] + out[2] == pytest.approx((sig[0] + sig[2] + 2 * c) / (2 * p.mu + 2 * p.lam), rel=1e-14)


def test_vectorised_shapes(params):
    eps = np.zeros((4, 5, 3))
    assert apply_C(params, eps).shape == (4, 5, 3)


def test_tensor_traces():
    p = MaterialParams(mu=2.0, lam=3.0)
    assert stiffness_trace(p) == pytest.approx(2 * 3.0 + 6 * 2.0)
    assert compliance_trace(p) == pytest.approx((3 - 2 * 3.0 / (2 * 2.0 + 2 * 3.0)) / (2 * 2.0))


def test_compliance_trace_matches_tensor(params):
    total = 0.0
    for i, j in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        unit = np.zeros((2, 2))
        unit[i, j] = 1.0
        sym = SymTensor2.from_matrix(0.5 * (unit + unit.T))
        total += apply_Cinv(params, sym).as_matrix()[i, j]
    assert total == pytest.approx(compliance_trace(params))


def test_symtensor_round_trip():
    t = SymTensor2(1.0, 2.0, 3.0)
    assert SymTensor2.from_matrix(t.as_matrix()) == t
    assert t.trace == 4.0


# ── Diffusivity ──────────────────────────────────────────────────

def test_rho_at_zero_trace(params):
    assert rho(params, 0.0) == pytest.approx(params.eta0 * params.rho0 + 1.0)


def test_rho_constant_without_eta1():
    p = MaterialParams(eta1=0.0)
    np.testing.assert_allclose(rho(p, np.linspace(-100, 100, 7)), 2.0)


def test_rho_unit_trace(params):
    assert rho(params, 1.0) == pytest.approx(1.9990005, abs=1e-7)


def test_rho_inv_within_bounds():
    p = MaterialParams(eta1=0.5)
    r1, r2 = rho_bounds(p)
    values = rho_inv(p, np.linspace(-20, 20, 401))
    assert values.min() >= r1 - 1e-15
    assert values.max() <= r2 + 1e-15
    assert (r1, r2) == (pytest.approx(0.5), pytest.approx(1.0))


def test_rho_prime_matches_finite_difference():
    p = MaterialParams(eta1=0.3)
    s, h = 1.3, 1e-6
    fd = (rho(p, s + h) - rho(p, s - h)) / (2 * h)
    assert rho_prime(p, s) == pytest.approx(fd, rel=1e-7)


def test_rho_inv_lipschitz_estimate():
    p = MaterialParams(eta1=0.2)
    est = rho_inv_lipschitz(p, bound=10.0)
    assert 0.0 < est["sampled"] <= est["analytic_cap"]
    assert est["analytic_cap"] == pytest.approx(math.sqrt(0.4 / math.e))


def test_bound_constants_unit(params):
    consts = bound_constants(params)
    assert consts["A"] == pytest.approx(1.5)
    assert consts["C"] == pytest.approx(1.0)
    assert consts["D"] == pytest.approx(math.sqrt(2.0) / 2)
    assert (consts["rho1"], consts["rho2"]) == (pytest.approx(0.5), pytest.approx(1.0))
