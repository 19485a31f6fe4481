"""
Porovem — Polynomial bases and quadrature.

Scaled monomials m_a(x) = ((x - x_K)/h_K)^a, their vector decompositions
(M_k, M^grad, M^perp), rigid body motions and their L2 complement, the
elasticity image basis C eps(m*), and quadrature on polygons and edges.

Polynomials are carried as coefficient arrays over the scaled monomials of a
fixed degree D; the last axis of every coefficient array runs over those monomials.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_jacobi

from porovem.mesh import CellGeometry, GeometryError, is_simple_polygon, polygon_geometry, signed_area

log = logging.getLogger(__name__)

GS_DROP_TOL = 1e-10


def dim_p(k: int) -> int:
    """dim P_k in two variables (0 for k < 0)."""
    return (k + 1) * (k + 2) // 2 if k >= 0 else 0


@lru_cache(maxsize=None)
def monomial_exponents(k: int) -> np.ndarray:
    """Multi-indices ordered by total degree, alpha = (d - j, j) for j = 0..d."""
    out = np.array([(d - j, j) for d in range(k + 1) for j in range(d + 1)], dtype=np.int64)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _exponent_index(k: int) -> dict:
    return {tuple(int(a) for a in alpha): i for i, alpha in enumerate(monomial_exponents(k))}


# ---------------------------------------------------------------------------
# Scaled monomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MonomialSet:
    degree: int
    centroid: np.ndarray
    h: float

    @property
    def exponents(self) -> np.ndarray:
        return monomial_exponents(self.degree)

    def __len__(self) -> int:
        return dim_p(self.degree)

    def index(self, alpha: Sequence[int]) -> int:
        try:
            return _exponent_index(self.degree)[(int(alpha[0]), int(alpha[1]))]
        except KeyError:
            raise ValueError(f"multi-index {tuple(alpha)} not in M_{self.degree}") from None

    def scaled(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(points, dtype=float)) - self.centroid) / self.h

    def values(self, points: np.ndarray) -> np.ndarray:
        """(N, n) monomial values."""
        xi = self.scaled(points)
        e = self.exponents
        return xi[:, None, 0] ** e[None, :, 0] * xi[:, None, 1] ** e[None, :, 1]

    def gradients(self, points: np.ndarray) -> np.ndarray:
        """(N, n, 2) physical gradients, chain factor 1/h included."""
        xi = self.scaled(points)
        e = self.exponents
        out = np.zeros((len(xi), len(e), 2))
        for axis in (0, 1):
            other = 1 - axis
            shifted = np.where(e[:, axis] > 0, e[:, axis] - 1, 0)
            out[:, :, axis] = e[None, :, axis] * xi[:, None, axis] ** shifted[None, :] \
                * xi[:, None, other] ** e[None, :, other]
        return out / self.h


def eval_monomial(mset: MonomialSet, alpha: Sequence[int], x: Sequence[float]) -> float:
    return float(mset.values(np.asarray(x, dtype=float))[0, mset.index(alpha)])


def eval_gradient(mset: MonomialSet, alpha: Sequence[int], x: Sequence[float]) -> np.ndarray:
    return mset.gradients(np.asarray(x, dtype=float))[0, mset.index(alpha)]


# ---------------------------------------------------------------------------
# Coefficient algebra (in the scaled variable)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def derivative_matrix(degree: int, axis: int) -> np.ndarray:
    """D with (D c) the coefficients of d/dxi_axis of the polynomial with coefficients c."""
    e = monomial_exponents(degree)
    index = _exponent_index(degree)
    out = np.zeros((len(e), len(e)))
    for j, alpha in enumerate(e):
        if alpha[axis] > 0:
            beta = list(alpha)
            beta[axis] -= 1
            out[index[tuple(int(b) for b in beta)], j] = alpha[axis]
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def shift_matrix(degree: int, axis: int) -> np.ndarray:
    """Multiplication by xi_axis; top-degree inputs are dropped (callers keep them zero)."""
    e = monomial_exponents(degree)
    index = _exponent_index(degree)
    out = np.zeros((len(e), len(e)))
    for j, alpha in enumerate(e):
        if alpha.sum() < degree:
            beta = list(alpha)
            beta[axis] += 1
            out[index[tuple(int(b) for b in beta)], j] = 1.0
    out.setflags(write=False)
    return out


def vector_monomials(k: int, degree: int) -> np.ndarray:
    """Vector M_k, component-major: (m_i, 0) for all i, then (0, m_i). Shape (2 n_k, 2, n_D)."""
    n = dim_p(k)
    out = np.zeros((2 * n, 2, dim_p(degree)))
    for i in range(n):
        out[i, 0, i] = 1.0
        out[n + i, 1, i] = 1.0
    return out


def grad_set(kp: int, degree: int) -> np.ndarray:
    """M^grad_{k'}: xi-gradients of the nonconstant monomials of M_{k'+1}."""
    n = dim_p(kp + 1)
    src = np.eye(dim_p(degree + 1))[1:n]
    d0, d1 = derivative_matrix(degree + 1, 0), derivative_matrix(degree + 1, 1)
    out = np.stack([src @ d0.T, src @ d1.T], axis=1)
    return out[..., :dim_p(degree)]


def perp_set(kp: int, degree: int) -> np.ndarray:
    """M^perp_{k'} = (xi2, -xi1) M_{k'-1}."""
    n = dim_p(kp - 1)
    src = np.eye(dim_p(degree))[:n]
    s0, s1 = shift_matrix(degree, 0), shift_matrix(degree, 1)
    return np.stack([src @ s1.T, -(src @ s0.T)], axis=1)


def rbm_set(h: float, degree: int) -> np.ndarray:
    """Scaled rigid body motions (1/h, 0), (0, 1/h), (-xi2, xi1)."""
    out = np.zeros((3, 2, dim_p(degree)))
    out[0, 0, 0] = 1.0 / h
    out[1, 1, 0] = 1.0 / h
    out[2, 0, 2] = -1.0
    out[2, 1, 1] = 1.0
    return out


def strain_coeffs(vec: np.ndarray, h: float, degree: int) -> np.ndarray:
    """Physical symmetric gradient of vector polynomials, components (11, 12, 22)."""
    d0, d1 = derivative_matrix(degree, 0), derivative_matrix(degree, 1)
    u1, u2 = vec[:, 0, :], vec[:, 1, :]
    e11 = u1 @ d0.T
    e22 = u2 @ d1.T
    e12 = 0.5 * (u1 @ d1.T + u2 @ d0.T)
    return np.stack([e11, e12, e22], axis=1) / h


def tensor_divergence(tensor: np.ndarray, h: float, degree: int) -> np.ndarray:
    """Row-wise divergence of symmetric tensor polynomials (11, 12, 22) -> vectors."""
    d0, d1 = derivative_matrix(degree, 0), derivative_matrix(degree, 1)
    t11, t12, t22 = tensor[:, 0, :], tensor[:, 1, :], tensor[:, 2, :]
    return np.stack([t11 @ d0.T + t12 @ d1.T, t12 @ d0.T + t22 @ d1.T], axis=1) / h


def evaluate(coeffs: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Evaluate coefficient arrays (f, ..., n) at points given monomial values (N, n) -> (N, f, ...)."""
    return np.tensordot(values, coeffs, axes=([1], [coeffs.ndim - 1]))


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (N, 2)
    weights: np.ndarray  # (N,)
    params: Optional[np.ndarray] = None  # edge parameter t in [-1/2, 1/2]

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.tensordot(self.weights, values, axes=([0], [0]))


@lru_cache(maxsize=None)
def gauss_legendre(npoints: int) -> Tuple[np.ndarray, np.ndarray]:
    x, w = legendre.leggauss(npoints)
    return x, w


@lru_cache(maxsize=None)
def gauss_lobatto_params(k: int) -> np.ndarray:
    """k+1 Gauss-Lobatto nodes mapped to [-1/2, 1/2] (endpoints included)."""
    if k < 1:
        raise ValueError(f"Gauss-Lobatto needs at least 2 points, got k={k}")
    x = np.empty(k + 1)
    x[0], x[-1] = -1.0, 1.0
    if k > 1:
        inner, _ = roots_jacobi(k - 1, 1.0, 1.0)
        x[1:-1] = np.sort(inner)
    out = 0.5 * x
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def _triangle_reference(degree: int) -> Tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule on the unit square for the map (u, v) -> triangle, Jacobian u."""
    nu = (degree + 3) // 2
    nv = (degree + 2) // 2
    xu, wu = gauss_legendre(nu)
    xv, wv = gauss_legendre(nv)
    u, v = 0.5 * (xu + 1.0), 0.5 * (xv + 1.0)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(0.25 * wu * u, wv)
    return np.column_stack([uu.ravel(), vv.ravel()]), ww.ravel()


def triangle_quadrature(p0: np.ndarray, p1: np.ndarray, p2: np.ndarray, degree: int) -> QuadratureRule:
    uv, w = _triangle_reference(degree)
    u, v = uv[:, :1], uv[:, 1:]
    pts = p0 + u * (p1 - p0) + u * v * (p2 - p1)
    det = abs((p1[0] - p0[0]) * (p2[1] - p1[1]) - (p1[1] - p0[1]) * (p2[0] - p1[0]))
    return QuadratureRule(pts, w * det)


def _ear_clip(v: np.ndarray) -> list:
    idx = list(range(len(v)))
    tris = []
    while len(idx) > 3:
        for pos in range(len(idx)):
            a, b, c = idx[pos - 1], idx[pos], idx[(pos + 1) % len(idx)]
            if signed_area(v[[a, b, c]]) <= 0.0:
                continue
            others = [i for i in idx if i not in (a, b, c)]
            if any(_inside_triangle(v[i], v[a], v[b], v[c]) for i in others):
                continue
            tris.append((a, b, c))
            idx.pop(pos)
            break
        else:
            raise GeometryError("ear clipping failed: polygon is not simple")
    tris.append(tuple(idx))
    return tris


def _inside_triangle(p, a, b, c) -> bool:
    def cross(o, q, r):
        return (q[0] - o[0]) * (r[1] - o[1]) - (q[1] - o[1]) * (r[0] - o[0])
    return cross(a, b, p) >= 0 and cross(b, c, p) >= 0 and cross(c, a, p) >= 0


def polygon_quadrature(cell: Union[CellGeometry, np.ndarray], exactness_degree: int) -> QuadratureRule:
    """Centroid-fan triangulation with a collapsed Gauss rule per triangle."""
    if exactness_degree < 0:
        raise ValueError(f"exactness degree must be >= 0, got {exactness_degree}")
    geo = cell if isinstance(cell, CellGeometry) else polygon_geometry(cell)
    v = geo.vertices
    if not is_simple_polygon(v):
        raise GeometryError("polygon quadrature needs a simple polygon")
    m = len(v)
    fan = [(geo.centroid, v[i], v[(i + 1) % m]) for i in range(m)]
    if min(signed_area(np.array(t)) for t in fan) <= 1e-14 * geo.area:
        log.debug("centroid fan not valid for this cell, using ear clipping")
        fan = [(v[a], v[b], v[c]) for a, b, c in _ear_clip(v)]
    rules = [triangle_quadrature(np.asarray(p0), np.asarray(p1), np.asarray(p2), exactness_degree)
             for p0, p1, p2 in fan]
    return QuadratureRule(np.vstack([r.points for r in rules]), np.concatenate([r.weights for r in rules]))


@dataclass(frozen=True)
class EdgeFrame:
    """A cell edge in its global parametrisation s(t) = midpoint + t (b - a), t in [-1/2, 1/2]."""

    midpoint: np.ndarray
    direction: np.ndarray  # b - a, global orientation
    length: float
    normal: np.ndarray  # outward unit normal for the owning cell
    sign: int

    def point(self, t: np.ndarray) -> np.ndarray:
        return self.midpoint + np.asarray(t, dtype=float)[:, None] * self.direction


def edge_frames(geometry: CellGeometry, signs: Sequence[int]) -> Tuple[EdgeFrame, ...]:
    v = geometry.vertices
    m = len(v)
    out = []
    for i in range(m):
        start, end = v[i], v[(i + 1) % m]
        a, b = (start, end) if signs[i] > 0 else (end, start)
        out.append(EdgeFrame(0.5 * (a + b), b - a, float(geometry.edge_lengths[i]),
                             geometry.edge_normals[i], int(signs[i])))
    return tuple(out)


def edge_quadrature(edge: Union[EdgeFrame, Tuple[np.ndarray, np.ndarray]], npoints: int) -> QuadratureRule:
    """Gauss rule on one edge, exact to degree 2 npoints - 1; `params` carries t."""
    if npoints < 1:
        raise ValueError(f"npoints must be >= 1, got {npoints}")
    if not isinstance(edge, EdgeFrame):
        a, b = (np.asarray(p, dtype=float) for p in edge)
        length = float(np.linalg.norm(b - a))
        edge = EdgeFrame(0.5 * (a + b), b - a, length, np.zeros(2), 1)
    x, w = gauss_legendre(npoints)
    t = 0.5 * x
    return QuadratureRule(edge.point(t), 0.5 * w * edge.length, t)


@lru_cache(maxsize=None)
def edge_mass(k: int) -> np.ndarray:
    """Mhat[j, i] = integral of t^(i+j) over [-1/2, 1/2]."""
    p = np.arange(k + 1)
    s = p[:, None] + p[None, :]
    out = np.where(s % 2 == 0, 2.0 * 0.5 ** (s + 1) / (s + 1), 0.0)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Gram matrices
# ---------------------------------------------------------------------------

def gram_matrix(basis_a: np.ndarray, basis_b: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    """G_ij = integral of A_i (.|:) B_j; bases are evaluated at rule.points as (N, n, *rank)."""
    basis_a, basis_b = np.asarray(basis_a), np.asarray(basis_b)
    if basis_a.shape[2:] != basis_b.shape[2:] or len(basis_a) != len(rule.weights) \
            or len(basis_b) != len(rule.weights):
        raise ValueError(f"incompatible bases {basis_a.shape} and {basis_b.shape} "
                         f"for {len(rule.weights)} points")
    a = basis_a.reshape(basis_a.shape[0], basis_a.shape[1], -1)
    b = basis_b.reshape(basis_b.shape[0], basis_b.shape[1], -1)
    return np.einsum("q,qic,qjc->ij", rule.weights, a, b)


# ---------------------------------------------------------------------------
# Decompositions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorDecomposition:
    degree: int
    vector: np.ndarray  # vector M_k
    grad: np.ndarray  # M^grad_k
    grad_lower: np.ndarray  # M^grad_{k-1}
    perp: np.ndarray  # M^perp_k


@dataclass(frozen=True)
class RBMBases:
    rbm: np.ndarray  # (3, 2, n_D)
    complement: np.ndarray  # RBM-perp in vector P_k, (2 n_k - 3, 2, n_D)


@dataclass(frozen=True)
class TildeBasis:
    """Generators m* (RBM-perp of degree k+1) and their strains eps(m*); C eps(m*) spans M~_k."""

    generators: np.ndarray  # (n_t, 2, n_D)
    strains: np.ndarray  # (n_t, 3, n_D)

    def __len__(self) -> int:
        return len(self.generators)

    def tensors(self, mu: float, lam: float) -> np.ndarray:
        e = self.strains
        tr = e[:, 0, :] + e[:, 2, :]
        out = 2.0 * mu * e
        out[:, 0, :] += lam * tr
        out[:, 2, :] += lam * tr
        return out


def rbm_complement(k: int, degree: int, rule: QuadratureRule, mset: MonomialSet) -> np.ndarray:
    """Modified Gram-Schmidt of vector M_k against RBM in the L2(K) metric, rank revealing."""
    values = mset.values(rule.points)
    candidates = vector_monomials(k, degree)
    metric = gram_matrix(evaluate(candidates, values), evaluate(candidates, values), rule)
    n = len(candidates)
    rbm_coeffs = np.zeros((3, n))
    nk = dim_p(k)
    rbm_coeffs[0, 0] = rbm_coeffs[1, nk] = 1.0 / mset.h
    rbm_coeffs[2, 2] = -1.0
    rbm_coeffs[2, nk + 1] = 1.0

    basis = []
    for r in rbm_coeffs:
        w = r.copy()
        for q in basis:
            w -= (q @ metric @ w) / (q @ metric @ q) * q
        basis.append(w)
    accepted = []
    for i in range(n):
        w = np.zeros(n)
        w[i] = 1.0
        before = np.sqrt(metric[i, i])
        for q in basis:
            w -= (q @ metric @ w) / (q @ metric @ q) * q
        if np.sqrt(max(w @ metric @ w, 0.0)) < GS_DROP_TOL * before:
            continue
        basis.append(w)
        accepted.append(w)
    if len(accepted) != n - 3:
        raise GeometryError(f"RBM complement has rank {len(accepted)}, expected {n - 3}")
    coeffs = np.array(accepted)
    return np.einsum("fv,vcn->fcn", coeffs, candidates)


def build_decompositions(geometry: CellGeometry, k: int, rule: Optional[QuadratureRule] = None
                         ) -> Tuple[MonomialSet, VectorDecomposition, RBMBases, TildeBasis]:
    """Monomials of degree k, vector decompositions, RBM / RBM-perp and the M~_k generators.

    All coefficient arrays live on the scaled monomials of degree k+1.
    """
    if k < 1:
        raise ValueError(f"polynomial degree must be >= 1, got {k}")
    degree = k + 1
    rule = rule or polygon_quadrature(geometry, 2 * k + 3)
    mono = MonomialSet(k, geometry.centroid, geometry.h)
    big = MonomialSet(degree, geometry.centroid, geometry.h)
    decomposition = VectorDecomposition(
        degree=k,
        vector=vector_monomials(k, degree),
        grad=grad_set(k, degree),
        grad_lower=grad_set(k - 1, degree),
        perp=perp_set(k, degree),
    )
    rbm = RBMBases(rbm_set(geometry.h, degree), rbm_complement(k, degree, rule, big))
    generators = rbm_complement(k + 1, degree, rule, big)
    tilde = TildeBasis(generators, strain_coeffs(generators, geometry.h, degree))
    return mono, decomposition, rbm, tilde


# ---------------------------------------------------------------------------
# Per-cell workspace
# ---------------------------------------------------------------------------

def as_vector_mk(coeffs: np.ndarray, k: int) -> np.ndarray:
    """Vector polynomial coefficients (f, 2, n_D) -> coordinates in vector M_k (f, 2 n_k)."""
    n = dim_p(k)
    if np.abs(coeffs[..., n:]).max(initial=0.0) > 1e-12 * max(np.abs(coeffs).max(initial=0.0), 1.0):
        raise ValueError(f"polynomial degree exceeds {k}")
    return np.concatenate([coeffs[:, 0, :n], coeffs[:, 1, :n]], axis=1)


SYM_WEIGHTS = np.array([1.0, 2.0, 1.0])  # A:B for (11, 12, 22) storage


class BasisWorkspace:
    """Everything polynomial about one cell at degree k: bases, quadrature, mass matrices.

    `signs` fixes the global parametrisation of each local edge, so two cells that are
    translates of each other with the same signs share identical local matrices.
    """

    def __init__(self, geometry: CellGeometry, k: int, signs: Sequence[int],
                 quad_degree: Optional[int] = None):
        self.geometry = geometry
        self.k = k
        self.degree = k + 1
        self.h = geometry.h
        self.rule = polygon_quadrature(geometry, quad_degree if quad_degree is not None else 2 * k + 3)
        self.mono, self.decomposition, self.rbm, self.tilde = build_decompositions(geometry, k, self.rule)
        self.big = MonomialSet(self.degree, geometry.centroid, geometry.h)
        self.values = self.big.values(self.rule.points)
        self.n_k = dim_p(k)

        scalar = self.values[:, :self.n_k]
        self.mass = gram_matrix(scalar[:, :, None], scalar[:, :, None], self.rule)
        self.vec_mass = np.kron(np.eye(2), self.mass)
        if np.linalg.cond(self.mass) > 1e12:
            raise GeometryError(f"cell mass matrix is numerically singular (h={self.h:.3e})")

        self.frames = edge_frames(geometry, signs)
        self.edge_points = k + 2
        self.edge_rules = tuple(edge_quadrature(f, self.edge_points) for f in self.frames)
        self.edge_values = tuple(self.big.values(r.points) for r in self.edge_rules)

    @property
    def n_edges(self) -> int:
        return len(self.frames)

    def eval(self, coeffs: np.ndarray, points: Optional[np.ndarray] = None) -> np.ndarray:
        values = self.values if points is None else self.big.values(points)
        return evaluate(coeffs, values)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return self.rule.integrate(values)

    def vector_gram(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """L2(K) Gram of two vector-polynomial coefficient sets."""
        return gram_matrix(self.eval(a), self.eval(b), self.rule)

    def translated(self, geometry: CellGeometry) -> "BasisWorkspace":
        """Same local matrices placed on a translate of this cell."""
        offset = geometry.centroid - self.geometry.centroid
        out = copy.copy(self)
        out.geometry = geometry
        out.rule = QuadratureRule(self.rule.points + offset, self.rule.weights)
        out.mono = MonomialSet(self.k, geometry.centroid, self.h)
        out.big = MonomialSet(self.degree, geometry.centroid, self.h)
        out.frames = tuple(replace(f, midpoint=f.midpoint + offset) for f in self.frames)
        out.edge_rules = tuple(QuadratureRule(r.points + offset, r.weights, r.params) for r in self.edge_rules)
        return out
