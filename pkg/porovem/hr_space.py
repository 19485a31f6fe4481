"""
Porovem — Hellinger-Reissner virtual stress space.

Local DoFs of a symmetric stress on one cell are, edge by edge, the 2(k+1) traction
moments (1/h_f) int_f (tau n)_c t^j ds (c = x, y; t the global edge parameter in
[-1/2, 1/2]) followed by the 2 dim P_k - 3 interior moments (1/h_K) int_K div tau . q,
q in RBM-perp. Local values use the outward normal; the global DoF is the local one
times the cell's edge sign.

From the DoFs alone this module computes div tau in vector P_k, the C-energy
projection onto C eps(P_{k+1}), and the local Biot blocks A_h, B (stress part) and D_h.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from porovem.mesh import GeometryError
from porovem.model import MaterialParams, compliance_trace, stiffness_trace
from porovem.polybasis import (
    SYM_WEIGHTS,
    BasisWorkspace,
    QuadratureRule,
    as_vector_mk,
    dim_p,
    edge_mass,
    edge_quadrature,
    evaluate,
    gram_matrix,
    strain_coeffs,
    tensor_divergence,
    vector_monomials,
)

log = logging.getLogger(__name__)

StressFn = Callable[[np.ndarray], np.ndarray]  # (N, 2) points -> (N, 3) components (11, 12, 22)
VectorFn = Callable[[np.ndarray], np.ndarray]  # (N, 2) points -> (N, 2)

S1_TRACES = ("compliance", "stiffness")
DEFAULT_S1_TRACE = "compliance"


@dataclass(frozen=True)
class HRDofLayout:
    k: int
    n_edges: int

    @property
    def per_edge(self) -> int:
        return 2 * (self.k + 1)

    @property
    def n_edge_dofs(self) -> int:
        return self.per_edge * self.n_edges

    @property
    def n_interior(self) -> int:
        return 2 * dim_p(self.k) - 3

    @property
    def n_dofs(self) -> int:
        return self.n_edge_dofs + self.n_interior

    def edge_slice(self, edge: int) -> slice:
        start = edge * self.per_edge
        return slice(start, start + self.per_edge)

    def index(self, edge: int, component: int, j: int) -> int:
        return edge * self.per_edge + component * (self.k + 1) + j

    @property
    def interior_slice(self) -> slice:
        return slice(self.n_edge_dofs, self.n_dofs)


def traction(values: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """sigma n for (..., 3) symmetric components."""
    t11, t12, t22 = values[..., 0], values[..., 1], values[..., 2]
    return np.stack([t11 * normal[0] + t12 * normal[1], t12 * normal[0] + t22 * normal[1]], axis=-1)


def s1_trace_factor(params: MaterialParams, mode: str) -> float:
    if mode == "compliance":
        return compliance_trace(params)
    if mode == "stiffness":
        return stiffness_trace(params)
    raise ValueError(f"unknown stabilization trace {mode!r}, expected one of {S1_TRACES}")


class HRLocalSpace:
    """Stress space of one cell: DoF maps, projector and local blocks, all dense."""

    def __init__(self, ws: BasisWorkspace, params: MaterialParams, s1_trace: str = DEFAULT_S1_TRACE):
        self.ws = ws
        self.params = params
        self.k = ws.k
        self.layout = HRDofLayout(ws.k, ws.n_edges)
        self.n_dofs = self.layout.n_dofs
        self.s1_trace = s1_trace

        k, h, degree = ws.k, ws.h, ws.degree
        self._edge_minv = np.linalg.inv(edge_mass(k))
        self._edge_recon = tuple(self._recon(r) for r in ws.edge_rules)

        # divergence in vector M_k from RBM boundary pairings and RBM-perp interior DoFs
        rbm_mk = as_vector_mk(ws.rbm.rbm, k)
        perp_mk = as_vector_mk(ws.rbm.complement, k)
        test = np.vstack([rbm_mk, perp_mk])
        rhs = np.zeros((len(test), self.n_dofs))
        rhs[:3] = self.boundary_pairing(ws.rbm.rbm)
        rhs[3:, self.layout.interior_slice] = h * np.eye(self.layout.n_interior)
        self.div_matrix = self._solve(test @ ws.vec_mass, rhs, "divergence")

        # C-energy projection onto span C eps(m*)
        self.tensors = ws.tilde.tensors(params.mu, params.lam)
        strains = ws.eval(ws.tilde.strains)
        tensor_values = ws.eval(self.tensors)
        self.gram = gram_matrix(strains * SYM_WEIGHTS, tensor_values, ws.rule)
        self.gram = 0.5 * (self.gram + self.gram.T)
        cross = ws.vector_gram(ws.tilde.generators, vector_monomials(k, degree))
        b = -cross @ self.div_matrix + self.boundary_pairing(ws.tilde.generators)
        self.projector = self._solve(self.gram, b, "C-energy Gram")
        self.tilde_dofs = self.dofs_of_tensors(self.tensors)

        # trace moments int tr(m~_i) m_j, j over M_k
        scalar = ws.values[:, :ws.n_k]
        tr_values = tensor_values[:, :, 0] + tensor_values[:, :, 2]
        self.trace_moments = gram_matrix(tr_values[:, :, None], scalar[:, :, None], ws.rule)

        self.s1_prefactor = 0.5 * h * s1_trace_factor(params, s1_trace)
        self.stabilization = self._stabilization()

    # --- construction helpers ---

    def _recon(self, rule: QuadratureRule) -> np.ndarray:
        """(N_q, k+1): edge-moment DoFs -> traction values at the rule's points."""
        powers = rule.params[:, None] ** np.arange(self.k + 1)[None, :]
        return powers @ self._edge_minv

    def _solve(self, matrix: np.ndarray, rhs: np.ndarray, what: str) -> np.ndarray:
        try:
            return np.linalg.solve(matrix, rhs)
        except np.linalg.LinAlgError as exc:
            raise GeometryError(f"singular {what} system on cell at {self.ws.geometry.centroid}") from exc

    def _stabilization(self) -> np.ndarray:
        ws, lay = self.ws, self.layout
        edge_block = np.zeros((self.n_dofs, self.n_dofs))
        for i in range(ws.n_edges):
            hf = ws.frames[i].length
            for c in range(2):
                sl = slice(lay.index(i, c, 0), lay.index(i, c, 0) + self.k + 1)
                edge_block[sl, sl] = hf * self._edge_minv
        residual = np.eye(self.n_dofs) - self.tilde_dofs @ self.projector
        return self.s1_prefactor * residual.T @ edge_block @ residual

    # --- DoF maps ---

    def boundary_pairing(self, vec: np.ndarray) -> np.ndarray:
        """Row f: stress DoFs -> closed-boundary integral of (tau n) . w_f."""
        out = np.zeros((len(vec), self.n_dofs))
        for i, rule in enumerate(self.ws.edge_rules):
            vals = evaluate(vec, self.ws.edge_values[i])  # (N_q, f, 2)
            block = np.einsum("q,qfc,qj->fcj", rule.weights, vals, self._edge_recon[i])
            out[:, self.layout.edge_slice(i)] = block.reshape(len(vec), -1)
        return out

    def dofs_of_tensors(self, tensors: np.ndarray) -> np.ndarray:
        """(n_dofs, f) DoF columns of polynomial stress fields given by coefficients (f, 3, n_D)."""
        ws, lay = self.ws, self.layout
        out = np.zeros((self.n_dofs, len(tensors)))
        powers = np.arange(self.k + 1)
        for i, (frame, rule) in enumerate(zip(ws.frames, ws.edge_rules)):
            tn = traction(evaluate(tensors, ws.edge_values[i]), frame.normal)  # (N_q, f, 2)
            tp = rule.params[:, None] ** powers[None, :]
            moments = np.einsum("q,qfc,qj->fcj", rule.weights / frame.length, tn, tp)
            out[lay.edge_slice(i)] = moments.reshape(len(tensors), -1).T
        div = tensor_divergence(tensors, ws.h, ws.degree)
        out[lay.interior_slice] = ws.vector_gram(div, ws.rbm.complement).T / ws.h
        return out

    def divergence(self, dofs: np.ndarray) -> np.ndarray:
        return self.div_matrix @ dofs

    def project(self, dofs: np.ndarray) -> np.ndarray:
        return self.projector @ dofs

    def stress_coefficients(self, proj: np.ndarray) -> np.ndarray:
        """(3, n_D) polynomial coefficients of the projected stress."""
        return np.tensordot(proj, self.tensors, axes=(0, 0))

    def stress_values(self, proj: np.ndarray, points: Optional[np.ndarray] = None) -> np.ndarray:
        """(N, 3) values of the projected stress at `points` (default: the cell rule)."""
        return self.ws.eval(self.stress_coefficients(proj)[None], points)[:, 0]

    def trace_values(self, proj: np.ndarray) -> np.ndarray:
        vals = self.stress_values(proj)
        return vals[:, 0] + vals[:, 2]

    # --- local blocks ---

    def local_A(self) -> np.ndarray:
        p = self.params
        ls = p.lame_sum
        n, nk = self.n_dofs, self.ws.n_k
        out = np.zeros((n + nk, n + nk))
        out[:n, :n] = self.projector.T @ self.gram @ self.projector + self.stabilization
        coupling = p.alpha / ls * self.projector.T @ self.trace_moments
        out[:n, n:] = coupling
        out[n:, :n] = coupling.T
        out[n:, n:] = (p.s0 + 2.0 * p.alpha ** 2 / ls) * self.ws.mass
        return 0.5 * (out + out.T)

    def local_B_div(self) -> np.ndarray:
        """(2 n_k, n_dofs): v coefficients x stress DoFs -> int v . div tau."""
        return self.ws.vec_mass @ self.div_matrix

    def local_D(self) -> np.ndarray:
        """(n_dofs + n_k, n_k): rows are (tau, q) tests, columns concentration coefficients."""
        p = self.params
        scale = p.beta / p.lame_sum
        return np.vstack([scale * self.projector.T @ self.trace_moments,
                          scale * 2.0 * p.alpha * self.ws.mass])

    # --- edge functionals ---

    def edge_traction_load(self, edge: int, fn: VectorFn, npoints: Optional[int] = None) -> np.ndarray:
        """int_f g . (tau n) ds for each local DoF of the edge (2(k+1) entries)."""
        frame = self.ws.frames[edge]
        rule = edge_quadrature(frame, npoints or self.ws.edge_points)
        g = np.asarray(fn(rule.points), dtype=float)
        return np.einsum("q,qc,qj->cj", rule.weights, g, self._recon(rule)).ravel()

    # --- interpolation ---

    def _edge_traction(self, edge: int, sigma_fn: StressFn, npoints: Optional[int]):
        frame = self.ws.frames[edge]
        rule = edge_quadrature(frame, npoints or self.ws.edge_points)
        return rule, traction(np.asarray(sigma_fn(rule.points), dtype=float), frame.normal)

    def edge_moments(self, edge: int, sigma_fn: StressFn, npoints: Optional[int] = None) -> np.ndarray:
        """Local traction-moment DoFs of one edge."""
        rule, tn = self._edge_traction(edge, sigma_fn, npoints)
        tp = rule.params[:, None] ** np.arange(self.k + 1)[None, :]
        return np.einsum("q,qc,qj->cj", rule.weights / self.ws.frames[edge].length, tn, tp).ravel()

    def interpolate(self, sigma_fn: StressFn, div_fn: Optional[VectorFn] = None,
                    npoints: Optional[int] = None) -> np.ndarray:
        ws, lay = self.ws, self.layout
        out = np.zeros(self.n_dofs)
        boundary = np.zeros(lay.n_interior)
        for i in range(ws.n_edges):
            out[lay.edge_slice(i)] = self.edge_moments(i, sigma_fn, npoints)
            if div_fn is None:
                rule, tn = self._edge_traction(i, sigma_fn, npoints)
                q = evaluate(ws.rbm.complement, ws.big.values(rule.points))
                boundary += np.einsum("q,qc,qic->i", rule.weights, tn, q)

        if div_fn is not None:
            q = ws.eval(ws.rbm.complement)
            div = np.asarray(div_fn(ws.rule.points), dtype=float)
            moments = np.einsum("q,qc,qic->i", ws.rule.weights, div, q)
        else:
            eps = ws.eval(strain_coeffs(ws.rbm.complement, ws.h, ws.degree))
            sig = np.asarray(sigma_fn(ws.rule.points), dtype=float)
            moments = boundary - np.einsum("q,qc,qic->i", ws.rule.weights, sig * SYM_WEIGHTS, eps)
        out[lay.interior_slice] = moments / ws.h
        return out

    def translated(self, geometry) -> "HRLocalSpace":
        out = copy.copy(self)
        out.ws = self.ws.translated(geometry)
        return out


# ---------------------------------------------------------------------------
# Operation-level functions
# ---------------------------------------------------------------------------

def hr_divergence(space: HRLocalSpace, dofs: np.ndarray) -> np.ndarray:
    """Coefficients of div tau_h in vector M_k (component-major)."""
    return space.divergence(dofs)


def hr_project(space: HRLocalSpace, dofs: np.ndarray) -> np.ndarray:
    return space.project(dofs)


def hr_local_A(space: HRLocalSpace) -> np.ndarray:
    return space.local_A()


def s1_stabilization(space: HRLocalSpace) -> np.ndarray:
    return space.stabilization


def hr_local_B_div(space: HRLocalSpace) -> np.ndarray:
    return space.local_B_div()


def hr_local_D(space: HRLocalSpace) -> np.ndarray:
    return space.local_D()


def hr_interpolate(space: HRLocalSpace, sigma_fn: StressFn, div_fn: Optional[VectorFn] = None,
                   npoints: Optional[int] = None) -> np.ndarray:
    return space.interpolate(sigma_fn, div_fn, npoints)
