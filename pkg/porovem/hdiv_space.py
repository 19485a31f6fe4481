"""
Porovem — Mixed virtual flux space.

Shared by the Darcy flux z and the diffusive flux zeta. Per edge: k+1 values of
xi . n at the Gauss-Lobatto points of the edge (ordered along the global edge
direction, outward normal locally); per cell: (1/h_K) int_K xi . g for g in
M^grad_{k-1}, then g in M^perp_k.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from porovem.mesh import GeometryError
from porovem.model import MaterialParams, rho_inv
from porovem.polybasis import (
    BasisWorkspace,
    QuadratureRule,
    as_vector_mk,
    dim_p,
    edge_mass,
    edge_quadrature,
    gauss_lobatto_params,
    gram_matrix,
)

log = logging.getLogger(__name__)

VectorFn = Callable[[np.ndarray], np.ndarray]
EDGE_MODES = ("projected", "pointwise")


@dataclass(frozen=True)
class HdivDofLayout:
    k: int
    n_edges: int

    @property
    def per_edge(self) -> int:
        return self.k + 1

    @property
    def n_edge_dofs(self) -> int:
        return self.per_edge * self.n_edges

    @property
    def n_grad(self) -> int:
        return dim_p(self.k) - 1

    @property
    def n_perp(self) -> int:
        return dim_p(self.k - 1)

    @property
    def n_interior(self) -> int:
        return self.n_grad + self.n_perp

    @property
    def n_dofs(self) -> int:
        return self.n_edge_dofs + self.n_interior

    def edge_slice(self, edge: int) -> slice:
        start = edge * self.per_edge
        return slice(start, start + self.per_edge)

    @property
    def grad_slice(self) -> slice:
        return slice(self.n_edge_dofs, self.n_edge_dofs + self.n_grad)

    @property
    def perp_slice(self) -> slice:
        return slice(self.n_edge_dofs + self.n_grad, self.n_dofs)

    @property
    def interior_slice(self) -> slice:
        return slice(self.n_edge_dofs, self.n_dofs)


class HdivLocalSpace:
    def __init__(self, ws: BasisWorkspace):
        self.ws = ws
        self.k = k = ws.k
        self.layout = lay = HdivDofLayout(k, ws.n_edges)
        self.n_dofs = lay.n_dofs
        h, nk = ws.h, ws.n_k
        dec = ws.decomposition

        self.gl_params = gauss_lobatto_params(k)
        vgl = self.gl_params[:, None] ** np.arange(k + 1)[None, :]
        self._gl_inv = np.linalg.inv(vgl)
        self._vgl = vgl
        self._edge_recon = tuple(self._recon(r) for r in ws.edge_rules)

        # divergence: int div xi m_j = -int xi . grad m_j + boundary
        rhs = np.zeros((nk, self.n_dofs))
        rhs[1:, lay.grad_slice] = -np.eye(lay.n_grad)
        rhs += self.boundary_pairing(slice(0, nk))
        self.div_matrix = self._solve(ws.mass, rhs, "mass")

        # L2 projection onto vector P_k through M^grad_k (+) M^perp_k
        big_n = dim_p(k + 1)
        nonconst = ws.values[:, 1:big_n]
        mixed = gram_matrix(ws.values[:, :nk, None], nonconst[:, :, None], ws.rule)  # (n_k, n_{k+1}-1)
        grad_rows = h * (-mixed.T @ self.div_matrix + self.boundary_pairing(slice(1, big_n)))
        perp_rows = np.zeros((lay.n_perp, self.n_dofs))
        perp_rows[:, lay.perp_slice] = h * np.eye(lay.n_perp)
        test = np.vstack([as_vector_mk(dec.grad, k), as_vector_mk(dec.perp, k)])
        self.projector = self._solve(test @ ws.vec_mass, np.vstack([grad_rows, perp_rows]), "L2 projection")
        self.monomial_dofs = self.dofs_of_vectors(dec.vector)
        self.residual = np.eye(self.n_dofs) - self.monomial_dofs @ self.projector

    # --- construction helpers ---

    def _recon(self, rule: QuadratureRule) -> np.ndarray:
        """(N_q, k+1): GL values -> normal flux at the rule's points."""
        return (rule.params[:, None] ** np.arange(self.k + 1)[None, :]) @ self._gl_inv

    def _solve(self, matrix: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
        try:
            return np.linalg.solve(matrix, rhs)
        except np.linalg.LinAlgError as exc:
            raise GeometryError(f"singular {what} system on cell at {self.ws.geometry.centroid}") from exc

    def boundary_pairing(self, columns: slice) -> np.ndarray:
        """Row f: flux DoFs -> boundary integral of (xi . n) m_f over the degree-(k+1) monomials in `columns`."""
        rows = len(range(*columns.indices(self.ws.values.shape[1])))
        out = np.zeros((rows, self.n_dofs))
        for i, rule in enumerate(self.ws.edge_rules):
            m = self.ws.edge_values[i][:, columns]
            out[:, self.layout.edge_slice(i)] = np.einsum("q,qf,ql->fl", rule.weights, m, self._edge_recon[i])
        return out

    def dofs_of_vectors(self, vec: np.ndarray) -> np.ndarray:
        """(n_dofs, f) DoF columns of vector polynomials with coefficients (f, 2, n_D)."""
        ws, lay = self.ws, self.layout
        out = np.zeros((self.n_dofs, len(vec)))
        for i, frame in enumerate(ws.frames):
            pts = frame.point(self.gl_params)
            out[lay.edge_slice(i)] = (ws.eval(vec, pts) @ frame.normal)
        g = np.concatenate([ws.decomposition.grad_lower, ws.decomposition.perp])
        out[lay.interior_slice] = ws.vector_gram(g, vec) / ws.h
        return out

    # --- maps ---

    def divergence(self, dofs: np.ndarray) -> np.ndarray:
        return self.div_matrix @ dofs

    def project(self, dofs: np.ndarray) -> np.ndarray:
        """Coefficients of the L2 projection in vector M_k (component-major)."""
        return self.projector @ dofs

    def vector_values(self, proj: np.ndarray, points: Optional[np.ndarray] = None) -> np.ndarray:
        nk = self.ws.n_k
        values = self.ws.values if points is None else self.ws.big.values(points)
        scalar = values[:, :nk]
        return np.stack([scalar @ proj[:nk], scalar @ proj[nk:]], axis=-1)

    # --- local blocks ---

    def dofi_stabilization(self, scale: float) -> np.ndarray:
        return scale * self.residual.T @ self.residual

    def local_C(self, params: MaterialParams) -> np.ndarray:
        kinv = params.kappa_inv
        weighted = self.projector.T @ np.kron(kinv, self.ws.mass) @ self.projector
        scale = self.ws.geometry.area * float(np.linalg.norm(kinv, "fro"))
        out = weighted + self.dofi_stabilization(scale)
        return 0.5 * (out + out.T)

    def local_a(self, params: MaterialParams, sigma_trace: Optional[np.ndarray] = None) -> np.ndarray:
        """Diffusion block with rho^-1 evaluated at tr of the projected stress on the cell rule."""
        ws = self.ws
        if sigma_trace is None:
            sigma_trace = np.zeros(len(ws.rule.weights))
        coeff = np.asarray(rho_inv(params, sigma_trace), dtype=float) * np.ones(len(ws.rule.weights))
        scalar = ws.values[:, :ws.n_k]
        weighted_mass = np.einsum("q,qi,qj->ij", ws.rule.weights * coeff, scalar, scalar)
        consistency = self.projector.T @ np.kron(np.eye(2), weighted_mass) @ self.projector
        scale = abs(float(ws.rule.weights @ coeff))
        out = consistency + self.dofi_stabilization(scale)
        return 0.5 * (out + out.T)

    def local_b(self) -> np.ndarray:
        """(n_k, n_dofs): -int psi div xi."""
        return -self.ws.mass @ self.div_matrix

    # --- edge functionals ---

    def edge_flux_load(self, edge: int, fn: Callable[[np.ndarray], np.ndarray],
                       npoints: Optional[int] = None) -> np.ndarray:
        """int_f g (xi . n) ds for each GL DoF of the edge."""
        rule = edge_quadrature(self.ws.frames[edge], npoints or self.ws.edge_points)
        g = np.asarray(fn(rule.points), dtype=float).reshape(-1)
        return np.einsum("q,q,ql->l", rule.weights, g, self._recon(rule))

    # --- interpolation ---

    def edge_dofs(self, edge: int, fn: VectorFn, mode: str = "projected", npoints: Optional[int] = None) -> np.ndarray:
        """GL normal-flux DoFs of one edge, from the L2(f) projection onto P_k or from raw point values."""
        if mode not in EDGE_MODES:
            raise ValueError(f"unknown edge rule {mode!r}, expected one of {EDGE_MODES}")
        frame = self.ws.frames[edge]
        if mode == "pointwise":
            return np.asarray(fn(frame.point(self.gl_params)), dtype=float) @ frame.normal
        rule = edge_quadrature(frame, npoints or self.ws.edge_points)
        flux = np.asarray(fn(rule.points), dtype=float) @ frame.normal
        tp = rule.params[:, None] ** np.arange(self.k + 1)[None, :]
        coeffs = np.linalg.solve(edge_mass(self.k), tp.T @ (rule.weights / frame.length * flux))
        return self._vgl @ coeffs

    def interpolate(self, fn: VectorFn, mode: str = "projected", npoints: Optional[int] = None) -> np.ndarray:
        ws, lay = self.ws, self.layout
        out = np.zeros(self.n_dofs)
        for i in range(ws.n_edges):
            out[lay.edge_slice(i)] = self.edge_dofs(i, fn, mode, npoints)
        g = ws.eval(np.concatenate([ws.decomposition.grad_lower, ws.decomposition.perp]))
        values = np.asarray(fn(ws.rule.points), dtype=float)
        out[lay.interior_slice] = np.einsum("q,qc,qic->i", ws.rule.weights, values, g) / ws.h
        return out

    def translated(self, geometry) -> "HdivLocalSpace":
        out = copy.copy(self)
        out.ws = self.ws.translated(geometry)
        return out


# ---------------------------------------------------------------------------
# Operation-level functions
# ---------------------------------------------------------------------------

def hdiv_divergence(space: HdivLocalSpace, dofs: np.ndarray) -> np.ndarray:
    return space.divergence(dofs)


def hdiv_project(space: HdivLocalSpace, dofs: np.ndarray) -> np.ndarray:
    return space.project(dofs)


def local_C(space: HdivLocalSpace, params: MaterialParams) -> np.ndarray:
    return space.local_C(params)


def local_a(space: HdivLocalSpace, params: MaterialParams, sigma_trace: Optional[np.ndarray] = None) -> np.ndarray:
    return space.local_a(params, sigma_trace)


def dofi_stabilization(space: HdivLocalSpace, scale: float) -> np.ndarray:
    return space.dofi_stabilization(scale)


def local_b(space: HdivLocalSpace) -> np.ndarray:
    return space.local_b()


def hdiv_interpolate(space: HdivLocalSpace, fn: VectorFn, mode: str = "projected",
                     npoints: Optional[int] = None) -> np.ndarray:
    return space.interpolate(fn, mode, npoints)
