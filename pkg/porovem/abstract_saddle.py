"""
Porovem — Perturbed saddle-point validator.

Dense finite-dimensional instances of

    [[A, B^T], [B, -C]] (sigma; u) = (F; G)

with A only positive semi-definite, B injective (smallest singular value beta_hat) and
C symmetric positive definite (eigenvalues in [gamma, |c|]). Checks the a priori bounds
with the explicit constants, the ellipticity of Theta(zeta) = A zeta + B^T C^-1 B zeta
and the linearity of zeta -> C^-1 B zeta. Norms are Euclidean.
"""

from __future__ import annotations

import logging
import pathlib
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from porovem.utils import append_jsonl, ordered_map, utc_now_iso

log = logging.getLogger(__name__)

PSD_TOL = 1e-12
RESIDUAL_TOL = 1e-10
LINEARITY_TOL = 1e-12
BOUND_SLACK = 1e-10


class HypothesisError(ValueError):
    """Instance violates positivity of A, injectivity of B or ellipticity of C."""


@dataclass(frozen=True)
class PerturbedSaddleInstance:
    A: np.ndarray  # (n, n)
    B: np.ndarray  # (m, n)
    C: np.ndarray  # (m, m)
    F: np.ndarray  # (n,)
    G: np.ndarray  # (m,)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def gamma(self) -> float:
        return float(scipy.linalg.eigvalsh(self.C)[0])

    @property
    def c_norm(self) -> float:
        return float(scipy.linalg.eigvalsh(self.C)[-1])

    @property
    def b_norm(self) -> float:
        return float(scipy.linalg.svdvals(self.B)[0])

    @property
    def beta_hat(self) -> float:
        """min over tau of |B tau| / |tau|; zero when B has a kernel."""
        if self.m < self.n:
            return 0.0
        return float(scipy.linalg.svdvals(self.B)[-1])

    def matrix(self) -> np.ndarray:
        return np.block([[self.A, self.B.T], [self.B, -self.C]])

    def with_loads(self, F: np.ndarray, G: np.ndarray) -> "PerturbedSaddleInstance":
        return PerturbedSaddleInstance(self.A, self.B, self.C, np.asarray(F, dtype=float), np.asarray(G, dtype=float))

    def validate(self) -> None:
        n, m = self.n, self.m
        if self.A.shape != (n, n) or self.B.shape != (m, n) or self.C.shape != (m, m):
            raise HypothesisError(f"inconsistent shapes A{self.A.shape} B{self.B.shape} C{self.C.shape}")
        if self.F.shape != (n,) or self.G.shape != (m,):
            raise HypothesisError(f"load shapes F{self.F.shape} G{self.G.shape} do not match n={n}, m={m}")
        sym_a = 0.5 * (self.A + self.A.T)
        a_min = float(scipy.linalg.eigvalsh(sym_a)[0])
        if a_min < -PSD_TOL * max(1.0, float(np.abs(self.A).max(initial=0.0))):
            raise HypothesisError(f"A is not positive semi-definite (min eigenvalue {a_min:.3e})")
        if self.beta_hat <= 0.0:
            raise HypothesisError("B is not injective (inf-sup constant is zero)")
        if not np.allclose(self.C, self.C.T, rtol=0.0, atol=1e-14 * max(1.0, float(np.abs(self.C).max()))):
            raise HypothesisError("C is not symmetric")
        if self.gamma <= PSD_TOL * max(self.c_norm, 0.0):
            raise HypothesisError(f"C is not positive definite (min eigenvalue {self.gamma:.3e})")


def check_hypotheses(instance: PerturbedSaddleInstance) -> None:
    instance.validate()


# ---------------------------------------------------------------------------
# Generation and solves
# ---------------------------------------------------------------------------

def _orthogonal(rng: np.random.Generator, size: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    return q * np.sign(np.diag(r))


def _injective_b(rng: np.random.Generator, n: int, m: int) -> Tuple[np.ndarray, np.ndarray]:
    """B = U[:, :n] S V^T with singular values in [0.5, 2]; also returns U."""
    u = _orthogonal(rng, m)
    v = _orthogonal(rng, n)
    s = rng.uniform(0.5, 2.0, n)
    return u[:, :n] @ np.diag(s) @ v.T, u


def random_instance(n: int, m: int, seed: int = 0) -> PerturbedSaddleInstance:
    """A = R^T R with R possibly rank deficient, B injective, C = Q diag(0.5..3) Q^T."""
    if not (1 <= n <= m):
        raise ValueError(f"need 1 <= n <= m, got n={n}, m={m}")
    rng = np.random.default_rng(seed)
    rank = int(rng.integers(0, n + 1))
    r = rng.standard_normal((rank, n))
    A = r.T @ r
    B, _ = _injective_b(rng, n, m)
    q = _orthogonal(rng, m)
    C = q @ np.diag(rng.uniform(0.5, 3.0, m)) @ q.T
    C = 0.5 * (C + C.T)
    return PerturbedSaddleInstance(A, B, C, rng.standard_normal(n), rng.standard_normal(m))


def _residual(instance: PerturbedSaddleInstance, sigma: np.ndarray, u: np.ndarray) -> float:
    rhs = np.concatenate([instance.F, instance.G])
    r = instance.matrix() @ np.concatenate([sigma, u]) - rhs
    scale = float(np.linalg.norm(rhs))
    return float(np.linalg.norm(r)) / scale if scale > 0.0 else float(np.linalg.norm(r))


def solve_perturbed(instance: PerturbedSaddleInstance) -> Tuple[np.ndarray, np.ndarray]:
    try:
        x = scipy.linalg.solve(instance.matrix(), np.concatenate([instance.F, instance.G]))
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        raise HypothesisError(f"block matrix is singular; the hypotheses cannot all hold ({exc})") from exc
    return x[:instance.n], x[instance.n:]


def solve_via_theta(instance: PerturbedSaddleInstance) -> Tuple[np.ndarray, np.ndarray]:
    """Elimination of u: (A + B^T C^-1 B) sigma = F + B^T C^-1 G, u = C^-1 (B sigma - G)."""
    c_factor = scipy.linalg.cho_factor(instance.C)
    c_inv_b = scipy.linalg.cho_solve(c_factor, instance.B)
    theta = instance.A + instance.B.T @ c_inv_b
    rhs = instance.F + instance.B.T @ scipy.linalg.cho_solve(c_factor, instance.G)
    sigma = scipy.linalg.solve(0.5 * (theta + theta.T), rhs, assume_a="pos")
    u = scipy.linalg.cho_solve(c_factor, instance.B @ sigma - instance.G)
    return sigma, u


# ---------------------------------------------------------------------------
# Constants and checks
# ---------------------------------------------------------------------------

def theorem_constants(instance: PerturbedSaddleInstance) -> Dict[str, float]:
    g, c, b, bh = instance.gamma, instance.c_norm, instance.b_norm, instance.beta_hat
    return {
        "sigma_F": c ** 2 / (g * bh ** 2),
        "sigma_G": b * c ** 2 / (g ** 2 * bh ** 2),
        "u_F": b * c ** 2 / (g ** 2 * bh ** 2),
        "u_G": b ** 2 * c ** 2 / (g ** 3 * bh ** 2) + 1.0 / g,
        "alpha_theta": g * bh ** 2 / c ** 2,
    }


def classical_constants(instance: PerturbedSaddleInstance) -> Dict[str, Any]:
    """Babuska-Brezzi quantities: inf-sup of B^T and ellipticity of A on ker B."""
    svals_t = scipy.linalg.svdvals(instance.B.T)
    classical_inf_sup = float(svals_t[-1]) if instance.n >= instance.m else 0.0
    kernel = scipy.linalg.null_space(instance.B)
    if kernel.shape[1] == 0:
        kernel_ellipticity = float("inf")
    else:
        restricted = kernel.T @ instance.A @ kernel
        kernel_ellipticity = float(scipy.linalg.eigvalsh(0.5 * (restricted + restricted.T))[0])
    return {
        "classical_inf_sup": classical_inf_sup,
        "kernel_dim": int(kernel.shape[1]),
        "kernel_ellipticity": kernel_ellipticity,
        "a_norm": float(scipy.linalg.norm(instance.A, 2)) if instance.n else 0.0,
        "classical_applicable": classical_inf_sup > 0.0 and kernel_ellipticity > 0.0,
    }


@dataclass
class BoundReport:
    sigma_norm: float
    u_norm: float
    constants: Dict[str, float]
    residual: float = 0.0
    bounds_ok: int = 0
    bounds_checked: int = 0
    theta_ok: bool = True
    min_theta_ratio: float = float("inf")
    linearity_ok: bool = True
    uniqueness_ok: bool = True
    via_theta_gap: float = 0.0
    violations: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (self.bounds_ok == self.bounds_checked and self.theta_ok and self.linearity_ok
                and self.uniqueness_ok and self.residual <= RESIDUAL_TOL)

    def summary(self) -> str:
        return (f"bounds {self.bounds_ok}/{self.bounds_checked}, theta {'ok' if self.theta_ok else 'FAIL'} "
                f"(min ratio {self.min_theta_ratio:.3f}), linearity {'ok' if self.linearity_ok else 'FAIL'}, "
                f"residual {self.residual:.1e}")

    def as_dict(self) -> Dict[str, Any]:
        return {
            "sigma_norm": self.sigma_norm, "u_norm": self.u_norm, "constants": dict(self.constants),
            "residual": self.residual, "bounds_ok": self.bounds_ok, "bounds_checked": self.bounds_checked,
            "theta_ok": self.theta_ok, "min_theta_ratio": self.min_theta_ratio,
            "linearity_ok": self.linearity_ok, "uniqueness_ok": self.uniqueness_ok,
            "via_theta_gap": self.via_theta_gap, "passed": self.passed,
            "violations": [{k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in item.items()}
                           for item in self.violations],
        }


def _within(value: float, bound: float) -> bool:
    return value <= bound * (1.0 + BOUND_SLACK) + 1e-14


def verify_theorem(instance: PerturbedSaddleInstance, trials: int = 100, directions: int = 1000,
                   seed: int = 0) -> BoundReport:
    """Bounds for the instance loads plus `trials - 1` random loads, Theta on random directions."""
    instance.validate()
    consts = theorem_constants(instance)
    rng = np.random.default_rng(seed)
    sigma, u = solve_perturbed(instance)
    report = BoundReport(float(np.linalg.norm(sigma)), float(np.linalg.norm(u)), consts,
                         residual=_residual(instance, sigma, u))

    for t in range(max(trials, 1)):
        inst = instance if t == 0 else instance.with_loads(rng.standard_normal(instance.n),
                                                           rng.standard_normal(instance.m))
        s, v = (sigma, u) if t == 0 else solve_perturbed(inst)
        nf, ng = float(np.linalg.norm(inst.F)), float(np.linalg.norm(inst.G))
        ns, nu = float(np.linalg.norm(s)), float(np.linalg.norm(v))
        ok_s = _within(ns, consts["sigma_F"] * nf + consts["sigma_G"] * ng)
        ok_u = _within(nu, consts["u_F"] * nf + consts["u_G"] * ng)
        report.bounds_checked += 1
        if ok_s and ok_u:
            report.bounds_ok += 1
        else:
            report.violations.append({"kind": "bound", "F": inst.F, "G": inst.G, "sigma_norm": ns, "u_norm": nu})

    c_factor = scipy.linalg.cho_factor(instance.C)
    zeta = rng.standard_normal((instance.n, max(directions, 2)))
    u_zeta = scipy.linalg.cho_solve(c_factor, instance.B @ zeta)
    theta = np.einsum("ij,ij->j", zeta, instance.A @ zeta + instance.B.T @ u_zeta)
    ratios = theta / np.einsum("ij,ij->j", zeta, zeta)
    report.min_theta_ratio = float(ratios.min())
    report.theta_ok = report.min_theta_ratio >= consts["alpha_theta"] * (1.0 - BOUND_SLACK)
    if not report.theta_ok:
        worst = int(np.argmin(ratios))
        report.violations.append({"kind": "theta", "zeta": zeta[:, worst], "ratio": float(ratios[worst])})

    x, y = rng.standard_normal(2)
    combined = scipy.linalg.cho_solve(c_factor, instance.B @ (x * zeta[:, 0] + y * zeta[:, 1]))
    expected = x * u_zeta[:, 0] + y * u_zeta[:, 1]
    gap = float(np.linalg.norm(combined - expected)) / max(float(np.linalg.norm(expected)), 1e-300)
    report.linearity_ok = gap <= LINEARITY_TOL
    if not report.linearity_ok:
        report.violations.append({"kind": "linearity", "gap": gap})

    s0, u0 = solve_perturbed(instance.with_loads(np.zeros(instance.n), np.zeros(instance.m)))
    report.uniqueness_ok = float(np.linalg.norm(s0)) + float(np.linalg.norm(u0)) <= 1e-12

    s_theta, u_theta = solve_via_theta(instance)
    report.via_theta_gap = float(np.linalg.norm(s_theta - sigma) + np.linalg.norm(u_theta - u))
    return report


# ---------------------------------------------------------------------------
# Negative probe and batch runs
# ---------------------------------------------------------------------------

@dataclass
class ProbeResult:
    hypothesis_error: str
    singular: bool
    min_singular_value: float
    null_residual: float


def hypothesis_probe(n: int, m: int, seed: int = 0) -> ProbeResult:
    """C with a zero eigenvalue along ker B^T and A = 0: (0, v0) solves the homogeneous system."""
    m = max(m, n + 1)
    rng = np.random.default_rng(seed)
    B, u_basis = _injective_b(rng, n, m)
    eigs = rng.uniform(0.5, 3.0, m)
    eigs[n] = 0.0
    C = u_basis @ np.diag(eigs) @ u_basis.T
    C = 0.5 * (C + C.T)
    instance = PerturbedSaddleInstance(np.zeros((n, n)), B, C, rng.standard_normal(n), rng.standard_normal(m))
    try:
        instance.validate()
        message = ""
    except HypothesisError as exc:
        message = str(exc)
    null = np.concatenate([np.zeros(n), u_basis[:, n]])
    svals = scipy.linalg.svdvals(instance.matrix())
    smin = float(svals[-1])
    return ProbeResult(message, smin <= 1e-10 * float(svals[0]), smin,
                       float(np.linalg.norm(instance.matrix() @ null)))


def run_trials(trials: int = 100, max_dim: int = 40, seed: int = 0, workers: int = 1,
               directions: int = 1000, events_path: Optional[pathlib.Path] = None) -> List[BoundReport]:
    """Independent random instances with n <= m <= max_dim."""
    rng = np.random.default_rng(seed)
    dims = []
    for _ in range(trials):
        n = int(rng.integers(1, max_dim + 1))
        dims.append((n, int(rng.integers(n, max_dim + 1))))

    def one(i: int) -> BoundReport:
        n, m = dims[i]
        return verify_theorem(random_instance(n, m, seed + i), trials=1, directions=directions, seed=seed + i)

    reports = ordered_map(one, list(range(trials)), workers)
    for i, rep in enumerate(reports):
        append_jsonl(events_path, {"ts": utc_now_iso(), "type": "saddle_trial", "trial": i, "n": dims[i][0],
                                   "m": dims[i][1], "passed": rep.passed, "residual": rep.residual})
        if not rep.passed:
            log.warning("saddle trial %d (n=%d, m=%d) failed: %s", i, dims[i][0], dims[i][1], rep.summary())
    return reports
