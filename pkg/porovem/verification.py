"""
Porovem — Manufactured solutions and convergence studies.

A case is three exact fields (u, p, phi) with hand-coded gradients and Hessians; every
other field and every load (sigma, z, zeta, f, g, ell) is derived from them through the
model's constitutive laws. Errors are the computable ones: projected stresses and
fluxes against the exact fields, plus the divergences, on a 2k+4 cell rule.
"""

from __future__ import annotations

import logging
import math
import pathlib
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from porovem.assembly import GlobalDofMap, LocalSpaces, gather, number_dofs
from porovem.hr_space import DEFAULT_S1_TRACE
from porovem.mesh import BoundaryTag, PolyMesh, build_family, tag_boundary
from porovem.model import MaterialParams, apply_C, rho, rho_prime
from porovem.polybasis import SYM_WEIGHTS, polygon_quadrature
from porovem.solver import FieldState, FixedPointConfig, SolveReport, picard
from porovem.utils import append_jsonl, convergence_rate, ordered_map, utc_now_iso

log = logging.getLogger(__name__)

BOUNDARY_TOL = 1e-12
COMPONENTS = ("sigma", "u", "z", "p", "zeta", "phi")
CSV_HEADER = "level,h,e_total,r_total,e_sigma,r_sigma,e_u,r_u,e_z,r_z,e_p,r_p,e_zeta,r_zeta,e_phi,r_phi,iters"
RATE_BANDS = {1: (1.85, 2.15), 2: (2.8, 3.2)}  # final r(e_total) per degree
COMPONENT_RATE_SLACK = 0.15
MAX_PICARD_ITERATIONS = 5

Points = np.ndarray
Array1D = Callable[[np.ndarray], np.ndarray]


# ---------------------------------------------------------------------------
# Analytic fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Profile:
    """A 1D function with its first two derivatives."""

    f: Array1D
    d1: Array1D
    d2: Array1D


def cos_profile(w: float) -> Profile:
    return Profile(lambda t: np.cos(w * t), lambda t: -w * np.sin(w * t), lambda t: -w * w * np.cos(w * t))


def sin_profile(w: float) -> Profile:
    return Profile(lambda t: np.sin(w * t), lambda t: w * np.cos(w * t), lambda t: -w * w * np.sin(w * t))


def exp_profile(a: float) -> Profile:
    return Profile(lambda t: np.exp(a * t), lambda t: a * np.exp(a * t), lambda t: a * a * np.exp(a * t))


def linear_profile(c0: float, c1: float) -> Profile:
    return Profile(lambda t: c0 + c1 * t, lambda t: c1 + 0.0 * t, lambda t: 0.0 * t)


ONE = linear_profile(1.0, 0.0)


def _points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class ScalarField:
    """Point-evaluable scalar: value (N,), grad (N, 2), hess (N, 2, 2)."""

    value: Callable[[Points], np.ndarray]
    grad: Callable[[Points], np.ndarray]
    hess: Callable[[Points], np.ndarray]

    @classmethod
    def separable(cls, fx: Profile, fy: Profile) -> "ScalarField":
        def value(x):
            x = _points(x)
            return fx.f(x[:, 0]) * fy.f(x[:, 1])

        def grad(x):
            x = _points(x)
            return np.stack([fx.d1(x[:, 0]) * fy.f(x[:, 1]), fx.f(x[:, 0]) * fy.d1(x[:, 1])], axis=-1)

        def hess(x):
            x = _points(x)
            a, b = x[:, 0], x[:, 1]
            mixed = fx.d1(a) * fy.d1(b)
            return np.stack([np.stack([fx.d2(a) * fy.f(b), mixed], axis=-1),
                             np.stack([mixed, fx.f(a) * fy.d2(b)], axis=-1)], axis=-2)

        return cls(value, grad, hess)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(lambda x: self.value(x) + other.value(x),
                           lambda x: self.grad(x) + other.grad(x),
                           lambda x: self.hess(x) + other.hess(x))


# ---------------------------------------------------------------------------
# Cases
# ---------------------------------------------------------------------------

def example1_boundary(point: np.ndarray) -> BoundaryTag:
    """Gamma_N = {x = 0} u {y = 0} of the unit square; the rest is Gamma_D."""
    x, y = float(point[0]), float(point[1])
    if abs(x) < BOUNDARY_TOL or abs(y) < BOUNDARY_TOL:
        return BoundaryTag.NEUMANN
    return BoundaryTag.DIRICHLET


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact (u, p, phi) plus the derived fields and loads, all vectorised over (N, 2) points."""

    name: str
    u1: ScalarField
    u2: ScalarField
    p_field: ScalarField
    phi_field: ScalarField
    params: MaterialParams = field(default_factory=MaterialParams)
    predicate: Callable[[np.ndarray], BoundaryTag] = example1_boundary

    # --- primary fields ---

    def u(self, x: Points) -> np.ndarray:
        return np.stack([self.u1.value(x), self.u2.value(x)], axis=-1)

    def grad_u(self, x: Points) -> np.ndarray:
        """G[n, c, i] = d_i u_c."""
        return np.stack([self.u1.grad(x), self.u2.grad(x)], axis=1)

    def hess_u(self, x: Points) -> np.ndarray:
        return np.stack([self.u1.hess(x), self.u2.hess(x)], axis=1)

    def p(self, x: Points) -> np.ndarray:
        return self.p_field.value(x)

    def grad_p(self, x: Points) -> np.ndarray:
        return self.p_field.grad(x)

    def phi(self, x: Points) -> np.ndarray:
        return self.phi_field.value(x)

    def grad_phi(self, x: Points) -> np.ndarray:
        return self.phi_field.grad(x)

    # --- derived fields ---

    def div_u(self, x: Points) -> np.ndarray:
        g = self.grad_u(x)
        return g[:, 0, 0] + g[:, 1, 1]

    def grad_div_u(self, x: Points) -> np.ndarray:
        h = self.hess_u(x)
        return h[:, 0, 0, :] + h[:, 1, 1, :]

    def strain(self, x: Points) -> np.ndarray:
        g = self.grad_u(x)
        return np.stack([g[:, 0, 0], 0.5 * (g[:, 0, 1] + g[:, 1, 0]), g[:, 1, 1]], axis=-1)

    def _isotropic(self, x: Points) -> np.ndarray:
        return self.params.alpha * self.p(x) + self.params.beta * self.phi(x)

    def sigma(self, x: Points) -> np.ndarray:
        """C eps(u) - (alpha p + beta phi) I as (11, 12, 22)."""
        out = apply_C(self.params, self.strain(x))
        shift = self._isotropic(x)
        out[:, 0] -= shift
        out[:, 2] -= shift
        return out

    def trace_sigma(self, x: Points) -> np.ndarray:
        return self.params.lame_sum * self.div_u(x) - 2.0 * self._isotropic(x)

    def grad_trace_sigma(self, x: Points) -> np.ndarray:
        prm = self.params
        return prm.lame_sum * self.grad_div_u(x) - 2.0 * (prm.alpha * self.grad_p(x) + prm.beta * self.grad_phi(x))

    def div_sigma(self, x: Points) -> np.ndarray:
        prm = self.params
        h = self.hess_u(x)
        laplace = h[:, :, 0, 0] + h[:, :, 1, 1]
        return (prm.mu * laplace + (prm.mu + prm.lam) * self.grad_div_u(x)
                - prm.alpha * self.grad_p(x) - prm.beta * self.grad_phi(x))

    def z(self, x: Points) -> np.ndarray:
        return -self.grad_p(x) @ self.params.kappa_matrix.T

    def div_z(self, x: Points) -> np.ndarray:
        return -np.einsum("ij,nij->n", self.params.kappa_matrix, self.p_field.hess(x))

    def diffusivity(self, x: Points) -> np.ndarray:
        return np.asarray(rho(self.params, self.trace_sigma(x)), dtype=float)

    def zeta(self, x: Points) -> np.ndarray:
        return -self.diffusivity(x)[:, None] * self.grad_phi(x)

    def div_zeta(self, x: Points) -> np.ndarray:
        s = self.trace_sigma(x)
        gphi = self.grad_phi(x)
        hphi = self.phi_field.hess(x)
        slope = np.asarray(rho_prime(self.params, s), dtype=float)
        return (-slope * np.einsum("ni,ni->n", self.grad_trace_sigma(x), gphi)
                - np.asarray(rho(self.params, s), dtype=float) * (hphi[:, 0, 0] + hphi[:, 1, 1]))

    # --- loads ---

    def f(self, x: Points) -> np.ndarray:
        return -self.div_sigma(x)

    def g(self, x: Points) -> np.ndarray:
        prm = self.params
        return prm.s0 * self.p(x) + prm.alpha * self.div_u(x) + self.div_z(x)

    def ell(self, x: Points) -> np.ndarray:
        return self.phi(x) + self.div_zeta(x)


def derive_fields(case: ManufacturedCase, params: Optional[MaterialParams] = None) -> ManufacturedCase:
    """The case with its derived fields bound to `params` (defaults to the case's own)."""
    return replace(case, params=params or case.params)


def example1_case(params: Optional[MaterialParams] = None) -> ManufacturedCase:
    w, v = 4.0 * math.pi, 2.0 * math.pi
    sep = ScalarField.separable
    return ManufacturedCase(
        name="example1",
        u1=sep(cos_profile(w), cos_profile(w)) + sep(exp_profile(-1.0), ONE),
        u2=sep(sin_profile(w), sin_profile(w)) + sep(ONE, exp_profile(-1.0)),
        p_field=sep(cos_profile(v), cos_profile(v)) + sep(ONE, exp_profile(1.0)),
        phi_field=sep(sin_profile(v), sin_profile(v)) + sep(exp_profile(1.0), ONE),
        params=params or MaterialParams(),
    )


def _affine(c0: float, cx: float, cy: float) -> ScalarField:
    return ScalarField.separable(linear_profile(c0, cx), ONE) + ScalarField.separable(ONE, linear_profile(0.0, cy))


def linear_case(params: Optional[MaterialParams] = None) -> ManufacturedCase:
    """Affine u, p, phi: every field lies in the discrete spaces (exact for eta1 = 0)."""
    return ManufacturedCase(
        name="linear",
        u1=_affine(0.1, 0.2, -0.3),
        u2=_affine(-0.2, 0.4, 0.1),
        p_field=_affine(1.0, 0.5, -0.25),
        phi_field=_affine(0.5, -0.3, 0.2),
        params=params or MaterialParams(eta1=0.0),
    )


CASES: Dict[str, Callable[[Optional[MaterialParams]], ManufacturedCase]] = {
    "example1": example1_case,
    "linear": linear_case,
}


def register_case(name: str, factory: Callable[[Optional[MaterialParams]], ManufacturedCase]) -> None:
    CASES[name] = factory


def make_case(name: str, params: Optional[MaterialParams] = None) -> ManufacturedCase:
    try:
        factory = CASES[name]
    except KeyError:
        raise ValueError(f"unknown case {name!r}, expected one of {sorted(CASES)}") from None
    return factory(params)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

@dataclass
class ErrorReport:
    sigma: float
    u: float
    z: float
    p: float
    zeta: float
    phi: float
    h: float = 0.0
    dofs: Dict[str, int] = field(default_factory=dict)
    iterations: int = 0
    converged: bool = True
    parts: Dict[str, float] = field(default_factory=dict)

    @property
    def total(self) -> float:
        return math.sqrt(sum(getattr(self, c) ** 2 for c in COMPONENTS))

    def component(self, name: str) -> float:
        return self.total if name == "total" else float(getattr(self, name))

    def as_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {c: getattr(self, c) for c in COMPONENTS}
        out.update(total=self.total, h=self.h, dofs=dict(self.dofs), iterations=self.iterations,
                   converged=self.converged, parts=dict(self.parts))
        return out


def _cell_errors(mesh: PolyMesh, dmap: GlobalDofMap, spaces: LocalSpaces, state: FieldState,
                 case: ManufacturedCase, degree: int, c: int) -> Dict[str, float]:
    cs = spaces[c]
    ws = cs.ws
    nk = ws.n_k
    rule = polygon_quadrature(mesh.geometry(c), degree)
    pts, w = rule.points, rule.weights
    scalar = ws.big.values(pts)[:, :nk]

    def vec(coeffs: np.ndarray) -> np.ndarray:
        return np.stack([scalar @ coeffs[:nk], scalar @ coeffs[nk:]], axis=-1)

    def sq(diff: np.ndarray) -> float:
        d = diff.reshape(len(w), -1)
        return float(w @ np.sum(d * d, axis=1))

    sig = gather(state.sigma, dmap.cell_sigma[c], dmap.sign_sigma[c])
    d_sig = case.sigma(pts) - cs.hr.stress_values(cs.hr.project(sig), pts)
    z = gather(state.z, dmap.cell_flux[c], dmap.sign_flux[c])
    zeta = gather(state.zeta, dmap.cell_flux[c], dmap.sign_flux[c])
    d_zeta = case.zeta(pts) - cs.hdiv.vector_values(cs.hdiv.project(zeta), pts)
    zeta_sq = np.sum(d_zeta * d_zeta, axis=1)
    return {
        "sigma_l2": float(w @ (d_sig * d_sig @ SYM_WEIGHTS)),
        "sigma_div": sq(case.div_sigma(pts) - vec(cs.hr.divergence(sig))),
        "u": sq(case.u(pts) - vec(state.u[dmap.cell_vector(c)])),
        "z_l2": sq(case.z(pts) - cs.hdiv.vector_values(cs.hdiv.project(z), pts)),
        "z_div": sq(case.div_z(pts) - scalar @ cs.hdiv.divergence(z)),
        "p": sq(case.p(pts) - scalar @ state.p[dmap.cell_scalar(c)]),
        "zeta_l4": float(w @ (zeta_sq * zeta_sq)),
        "zeta_div": sq(case.div_zeta(pts) - scalar @ cs.hdiv.divergence(zeta)),
        "phi": sq(case.phi(pts) - scalar @ state.phi[dmap.cell_scalar(c)]),
    }


def compute_errors(mesh: PolyMesh, dmap: GlobalDofMap, state: FieldState, case: ManufacturedCase,
                   spaces: Optional[LocalSpaces] = None, degree: Optional[int] = None,
                   workers: int = 1, report: Optional[SolveReport] = None) -> ErrorReport:
    """Total computable error; the zeta term carries the squared L4 norm of the flux error."""
    spaces = spaces or LocalSpaces(mesh, dmap.k, case.params)
    degree = 2 * dmap.k + 4 if degree is None else degree
    cells = ordered_map(lambda c: _cell_errors(mesh, dmap, spaces, state, case, degree, c),
                        list(range(mesh.n_cells)), workers)
    sums = {key: math.fsum(cell[key] for cell in cells) for key in cells[0]}
    return ErrorReport(
        sigma=math.sqrt(sums["sigma_l2"] + sums["sigma_div"]),
        u=math.sqrt(sums["u"]),
        z=math.sqrt(sums["z_l2"] + sums["z_div"]),
        p=math.sqrt(sums["p"]),
        zeta=math.sqrt(math.sqrt(sums["zeta_l4"]) + sums["zeta_div"]),
        phi=math.sqrt(sums["phi"]),
        h=mesh.h,
        dofs=dmap.counts(),
        iterations=report.iterations if report else 0,
        converged=report.converged if report else True,
        parts={key: math.sqrt(val) for key, val in sums.items()},
    )


# ---------------------------------------------------------------------------
# Studies
# ---------------------------------------------------------------------------

@dataclass
class StudyLevel:
    level: int
    n: Union[int, str]
    errors: ErrorReport

    @property
    def h(self) -> float:
        return self.errors.h


@dataclass
class RateTable:
    levels: List[StudyLevel] = field(default_factory=list)

    def rates(self, name: str) -> List[Optional[float]]:
        """r(.) per level; None on the first level."""
        out: List[Optional[float]] = [None]
        for prev, cur in zip(self.levels, self.levels[1:]):
            out.append(convergence_rate(prev.errors.component(name), cur.errors.component(name), prev.h, cur.h))
        return out[:len(self.levels)]

    def final_rate(self, name: str = "total") -> Optional[float]:
        return self.rates(name)[-1] if self.levels else None

    @property
    def all_converged(self) -> bool:
        return all(lv.errors.converged for lv in self.levels)

    def rows(self) -> List[List[str]]:
        columns = ["total", *COMPONENTS]
        rates = {name: self.rates(name) for name in columns}
        out = []
        for i, lv in enumerate(self.levels):
            row = [str(lv.level), f"{lv.h:.4e}"]
            for name in columns:
                r = rates[name][i]
                row += [f"{lv.errors.component(name):.4e}", "*" if r is None else f"{r:.2f}"]
            row.append(str(lv.errors.iterations))
            out.append(row)
        return out

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [",".join(r) for r in self.rows()]) + "\n"

    def format(self) -> str:
        header = CSV_HEADER.split(",")
        body = self.rows()
        widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(header)]
        lines = ["  ".join(h.rjust(wd) for h, wd in zip(header, widths))]
        lines += ["  ".join(cell.rjust(wd) for cell, wd in zip(r, widths)) for r in body]
        return "\n".join(lines)

    def acceptance_failures(self, k: int) -> List[str]:
        """Final total rate inside its band, component rates >= k - slack, Picard within the iteration cap."""
        failures = []
        low, high = RATE_BANDS.get(k, (k + 1 - COMPONENT_RATE_SLACK, k + 1 + COMPONENT_RATE_SLACK))
        total = self.final_rate("total")
        if total is None or not low <= total <= high:
            failures.append(f"r(e_total) = {total} outside [{low}, {high}]")
        for name in COMPONENTS:
            r = self.final_rate(name)
            if r is None or not r >= k - COMPONENT_RATE_SLACK:
                failures.append(f"r(e_{name}) = {r} below {k - COMPONENT_RATE_SLACK}")
        for lv in self.levels:
            if lv.errors.iterations > MAX_PICARD_ITERATIONS or not lv.errors.converged:
                failures.append(f"level {lv.level}: {lv.errors.iterations} picard iterations "
                                f"(converged={lv.errors.converged})")
        return failures


def solve_level(mesh: PolyMesh, k: int, case: ManufacturedCase, config: Optional[FixedPointConfig] = None,
                essential: str = "exact", workers: int = 1, s1_trace: str = DEFAULT_S1_TRACE,
                events_path: Optional[pathlib.Path] = None):
    """Tag, number, solve and measure one mesh: (mesh, dmap, spaces, state, report, errors)."""
    mesh = tag_boundary(mesh, case.predicate)
    dmap = number_dofs(mesh, k)
    spaces = LocalSpaces(mesh, k, case.params, s1_trace=s1_trace, workers=workers)
    state, report = picard(mesh, dmap, case.params, case, config, spaces, essential, workers, events_path)
    errors = compute_errors(mesh, dmap, state, case, spaces, workers=workers, report=report)
    return mesh, dmap, spaces, state, report, errors


def run_study(family: str, levels: Sequence[Union[int, str]], k: int, params: MaterialParams,
              case: Optional[ManufacturedCase] = None, config: Optional[FixedPointConfig] = None,
              essential: str = "exact", workers: int = 1, seed: int = 0, distortion: Optional[float] = None,
              s1_trace: str = DEFAULT_S1_TRACE, events_path: Optional[pathlib.Path] = None) -> RateTable:
    if len(levels) < 2:
        raise ValueError(f"a convergence study needs at least 2 levels, got {len(levels)}")
    case = derive_fields(case or example1_case(params), params)
    table = RateTable()
    for i, n in enumerate(levels, 1):
        mesh = build_family(family, n, seed=seed, distortion=distortion)
        _, _, _, _, report, errors = solve_level(mesh, k, case, config, essential, workers, s1_trace, events_path)
        table.levels.append(StudyLevel(i, n, errors))
        rate = table.rates("total")[-1]
        log.info("level %d (n=%s): h=%.3e e_total=%.3e rate=%s iters=%d%s", i, n, errors.h, errors.total,
                 "*" if rate is None else f"{rate:.2f}", report.iterations, "" if report.converged else " (not converged)")
        append_jsonl(events_path, {"ts": utc_now_iso(), "type": "study_level", "level": i, "n": n,
                                   "errors": errors.as_dict(), "rate_total": rate})
    return table
