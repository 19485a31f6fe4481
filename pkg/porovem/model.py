"""
Porovem — Material model.

Isotropic elasticity tensor C and its inverse, Biot/diffusion parameters and the
stress-assisted diffusivity rho(tr sigma) = eta0*rho0 + exp(-eta1 (tr sigma)^2).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, Tuple, Union

import numpy as np

log = logging.getLogger(__name__)

DIM = 2


class ParameterError(ValueError):
    """Material parameters outside their admissible range."""


@dataclass(frozen=True)
class MaterialParams:
    mu: float = 1.0
    lam: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    s0: float = 1.0
    kappa: Tuple[Tuple[float, float], Tuple[float, float]] = ((1.0, 0.0), (0.0, 1.0))
    rho0: float = 1.0
    eta0: float = 1.0
    eta1: float = 1e-3
    _kappa_eigs: Tuple[float, float] = field(default=(1.0, 1.0), init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.mu <= 0.0:
            raise ParameterError(f"mu must be > 0, got {self.mu}")
        if self.lam < 0.0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if 2.0 * self.mu + DIM * self.lam <= 0.0:
            raise ParameterError("2 mu + d lambda must be > 0")
        if self.s0 < 0.0:
            raise ParameterError(f"s0 must be >= 0, got {self.s0}")
        for name in ("rho0", "eta0"):
            if getattr(self, name) <= 0.0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.eta1 < 0.0:
            raise ParameterError(f"eta1 must be >= 0, got {self.eta1}")
        kap = np.asarray(self.kappa, dtype=float)
        if kap.shape != (2, 2) or abs(kap[0, 1] - kap[1, 0]) > 1e-14 * np.abs(kap).max():
            raise ParameterError(f"kappa must be a symmetric 2x2 matrix, got {self.kappa}")
        eigs = np.linalg.eigvalsh(kap)
        if eigs[0] <= 0.0:
            raise ParameterError(f"kappa must be positive definite, eigenvalues {eigs}")
        object.__setattr__(self, "kappa", ((float(kap[0, 0]), float(kap[0, 1])), (float(kap[1, 0]), float(kap[1, 1]))))
        object.__setattr__(self, "_kappa_eigs", (float(eigs[0]), float(eigs[1])))

    @property
    def kappa_bounds(self) -> Tuple[float, float]:
        """(kappa1, kappa2) with 0 < kappa1 <= kappa2."""
        return self._kappa_eigs

    @property
    def kappa_matrix(self) -> np.ndarray:
        return np.array(self.kappa)

    @property
    def kappa_inv(self) -> np.ndarray:
        return np.linalg.inv(self.kappa_matrix)

    @property
    def lame_sum(self) -> float:
        """2 mu + d lambda."""
        return 2.0 * self.mu + DIM * self.lam

    def with_updates(self, **changes) -> "MaterialParams":
        return replace(self, **changes)

    def as_dict(self) -> Dict[str, float]:
        (k11, k12), (_, k22) = self.kappa
        return {"mu": self.mu, "lambda": self.lam, "alpha": self.alpha, "beta": self.beta, "s0": self.s0,
                "kappa11": k11, "kappa12": k12, "kappa22": k22,
                "rho0": self.rho0, "eta0": self.eta0, "eta1": self.eta1}


@dataclass(frozen=True)
class SymTensor2:
    t11: float
    t12: float
    t22: float

    @property
    def trace(self) -> float:
        return self.t11 + self.t22

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.t11, self.t12], [self.t12, self.t22]])

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "SymTensor2":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), 0.5 * float(m[0, 1] + m[1, 0]), float(m[1, 1]))

    def as_array(self) -> np.ndarray:
        return np.array([self.t11, self.t12, self.t22])

    def ddot(self, other: "SymTensor2") -> float:
        return self.t11 * other.t11 + 2.0 * self.t12 * other.t12 + self.t22 * other.t22


TensorLike = Union[SymTensor2, np.ndarray]


def _components(t: TensorLike) -> np.ndarray:
    return t.as_array() if isinstance(t, SymTensor2) else np.asarray(t, dtype=float)


def _wrap(like: TensorLike, arr: np.ndarray) -> TensorLike:
    return SymTensor2(*(float(v) for v in arr)) if isinstance(like, SymTensor2) else arr


def apply_C(params: MaterialParams, eps: TensorLike) -> TensorLike:
    """C eps = 2 mu eps + lambda tr(eps) I; arrays carry (11, 12, 22) on the last axis."""
    e = _components(eps)
    tr = e[..., 0] + e[..., 2]
    out = 2.0 * params.mu * e
    out[..., 0] += params.lam * tr
    out[..., 2] += params.lam * tr
    return _wrap(eps, out)


def apply_Cinv(params: MaterialParams, sig: TensorLike) -> TensorLike:
    """C^-1 sigma = (sigma - lambda/(2 mu + d lambda) tr(sigma) I) / (2 mu)."""
    s = _components(sig)
    tr = s[..., 0] + s[..., 2]
    shift = params.lam / params.lame_sum * tr
    out = np.array(s, dtype=float, copy=True)
    out[..., 0] -= shift
    out[..., 2] -= shift
    return _wrap(sig, out / (2.0 * params.mu))


def stiffness_trace(params: MaterialParams) -> float:
    """C_ijij = d lambda + mu (d^2 + d)."""
    return DIM * params.lam + params.mu * (DIM * DIM + DIM)


def compliance_trace(params: MaterialParams) -> float:
    """(C^-1)_ijij = ((d^2 + d)/2 - d lambda/(2 mu + d lambda)) / (2 mu)."""
    return (0.5 * (DIM * DIM + DIM) - DIM * params.lam / params.lame_sum) / (2.0 * params.mu)


# ---------------------------------------------------------------------------
# Diffusivity
# ---------------------------------------------------------------------------

def rho(params: MaterialParams, tr_sigma):
    s = np.asarray(tr_sigma, dtype=float)
    out = params.eta0 * params.rho0 + np.exp(-params.eta1 * s * s)
    return float(out) if out.ndim == 0 else out


def rho_inv(params: MaterialParams, tr_sigma):
    out = 1.0 / np.asarray(rho(params, tr_sigma), dtype=float)
    return float(out) if out.ndim == 0 else out


def rho_prime(params: MaterialParams, tr_sigma):
    """d rho / d(tr sigma) = -2 eta1 s exp(-eta1 s^2)."""
    s = np.asarray(tr_sigma, dtype=float)
    out = -2.0 * params.eta1 * s * np.exp(-params.eta1 * s * s)
    return float(out) if out.ndim == 0 else out


def rho_bounds(params: MaterialParams) -> Tuple[float, float]:
    """(rho1, rho2): bounds of rho^-1, i.e. 1/(eta0 rho0 + 1) <= rho^-1 <= 1/(eta0 rho0)."""
    base = params.eta0 * params.rho0
    return 1.0 / (base + 1.0), 1.0 / base


def rho_inv_lipschitz(params: MaterialParams, bound: float, samples: int = 20001) -> Dict[str, float]:
    """Lipschitz constant of rho^-1 on [-bound, bound]: dense-sampling estimate and analytic cap.

    |d/ds rho^-1| = |rho'| / rho^2 <= max|rho'| / (eta0 rho0)^2, and max|rho'| = sqrt(2 eta1/e).
    """
    s = np.linspace(-bound, bound, samples)
    values = rho_inv(params, s)
    sampled = float(np.max(np.abs(np.diff(values)) / np.diff(s))) if samples > 1 else 0.0
    cap = math.sqrt(2.0 * params.eta1 / math.e) / (params.eta0 * params.rho0) ** 2
    return {"sampled": sampled, "analytic_cap": cap}


def bound_constants(params: MaterialParams) -> Dict[str, float]:
    """Boundedness constants of the continuous forms (Euclidean graph norms)."""
    mu, lam, alpha, beta, s0 = params.mu, params.lam, params.alpha, params.beta, params.s0
    ls = params.lame_sum
    kappa1, _ = params.kappa_bounds
    rho1, rho2 = rho_bounds(params)
    return {
        "A": max(1.0 / (2.0 * mu) + lam / (2.0 * mu * ls), alpha * math.sqrt(DIM) / ls, s0 + DIM * alpha ** 2 / ls),
        "C": 1.0 / kappa1,
        "D": beta * math.sqrt(DIM) * (1.0 + alpha) / ls,
        "rho1": rho1,
        "rho2": rho2,
    }
