"""
Porovem — Global assembly.

DoF numbering, the cached per-cell local spaces, the Biot block system
[(sigma, p), (u, z)], the diffusion block system [zeta, phi], the load functionals,
essential (Gamma_N) constraints and the discrete conservation residuals.

Local-to-global: a local edge DoF equals the cell's edge sign times the global DoF,
so every local matrix K enters the global one as S K S with S = diag(signs).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from porovem.hdiv_space import HdivLocalSpace
from porovem.hr_space import DEFAULT_S1_TRACE, HRLocalSpace
from porovem.mesh import BoundaryTag, MeshError, PolyMesh
from porovem.model import MaterialParams
from porovem.polybasis import BasisWorkspace, dim_p
from porovem.utils import ordered_map

if TYPE_CHECKING:
    from porovem.verification import ManufacturedCase

log = logging.getLogger(__name__)

CHUNK_CELLS = 512
ESSENTIAL_MODES = ("exact", "zero")
BIOT_FIELDS = ("sigma", "p", "u", "z")
DIFFUSION_FIELDS = ("zeta", "phi")


# ---------------------------------------------------------------------------
# DoF numbering
# ---------------------------------------------------------------------------

class GlobalDofMap:
    """Field-major global numbering: edge DoFs by edge index, then interior DoFs by cell.

    z and zeta share one layout. Pressure, displacement and concentration are cellwise
    monomial coefficients (M_k, vector M_k, M_k).
    """

    def __init__(self, mesh: PolyMesh, k: int):
        self.k = k
        self.n_cells = mesh.n_cells
        self.n_edges = mesh.n_edges
        nk = dim_p(k)
        self.n_k = nk
        self.sigma_edge = 2 * (k + 1)
        self.sigma_interior = 2 * nk - 3
        self.flux_edge = k + 1
        self.flux_interior = nk - 1 + dim_p(k - 1)

        n_flux = self.flux_edge * mesh.n_edges + self.flux_interior * mesh.n_cells
        self.sizes: Dict[str, int] = {
            "sigma": self.sigma_edge * mesh.n_edges + self.sigma_interior * mesh.n_cells,
            "p": nk * mesh.n_cells,
            "u": 2 * nk * mesh.n_cells,
            "z": n_flux,
            "zeta": n_flux,
            "phi": nk * mesh.n_cells,
        }

        self.cell_sigma: List[np.ndarray] = []
        self.sign_sigma: List[np.ndarray] = []
        self.cell_flux: List[np.ndarray] = []
        self.sign_flux: List[np.ndarray] = []
        sigma_int0 = self.sigma_edge * mesh.n_edges
        flux_int0 = self.flux_edge * mesh.n_edges
        for c in range(mesh.n_cells):
            edges, signs = mesh.cell_edges[c], mesh.cell_signs[c]
            s_idx = [e * self.sigma_edge + np.arange(self.sigma_edge) for e in edges]
            s_idx.append(sigma_int0 + c * self.sigma_interior + np.arange(self.sigma_interior))
            f_idx = [e * self.flux_edge + np.arange(self.flux_edge) for e in edges]
            f_idx.append(flux_int0 + c * self.flux_interior + np.arange(self.flux_interior))
            self.cell_sigma.append(np.concatenate(s_idx))
            self.sign_sigma.append(np.concatenate([np.repeat(signs, self.sigma_edge).astype(float),
                                                   np.ones(self.sigma_interior)]))
            self.cell_flux.append(np.concatenate(f_idx))
            self.sign_flux.append(np.concatenate([np.repeat(signs, self.flux_edge).astype(float),
                                                  np.ones(self.flux_interior)]))

        neumann = [int(e) for e in mesh.boundary_edges if mesh.tags.get(int(e)) == BoundaryTag.NEUMANN]
        self.neumann_edges = np.array(neumann, dtype=np.int64)
        self.sigma_fixed = np.array([e * self.sigma_edge + j for e in neumann for j in range(self.sigma_edge)],
                                    dtype=np.int64)
        self.flux_fixed = np.array([e * self.flux_edge + j for e in neumann for j in range(self.flux_edge)],
                                   dtype=np.int64)

    # --- per-cell coefficient blocks ---

    def cell_scalar(self, c: int) -> np.ndarray:
        return c * self.n_k + np.arange(self.n_k)

    def cell_vector(self, c: int) -> np.ndarray:
        return 2 * c * self.n_k + np.arange(2 * self.n_k)

    # --- system layouts ---

    def offsets(self, fields: Sequence[str]) -> Dict[str, int]:
        out, pos = {}, 0
        for name in fields:
            out[name] = pos
            pos += self.sizes[name]
        return out

    @property
    def n_biot(self) -> int:
        return sum(self.sizes[f] for f in BIOT_FIELDS)

    @property
    def n_diffusion(self) -> int:
        return sum(self.sizes[f] for f in DIFFUSION_FIELDS)

    def split(self, x: np.ndarray, fields: Sequence[str]) -> Dict[str, np.ndarray]:
        off = self.offsets(fields)
        return {f: np.array(x[off[f]:off[f] + self.sizes[f]]) for f in fields}

    def biot_cell_dofs(self, c: int) -> Tuple[np.ndarray, np.ndarray]:
        """Biot-system indices and signs of cell c, local order [sigma, p, u, z]."""
        off = self.offsets(BIOT_FIELDS)
        idx = np.concatenate([off["sigma"] + self.cell_sigma[c], off["p"] + self.cell_scalar(c),
                              off["u"] + self.cell_vector(c), off["z"] + self.cell_flux[c]])
        signs = np.concatenate([self.sign_sigma[c], np.ones(3 * self.n_k), self.sign_flux[c]])
        return idx, signs

    def diffusion_cell_dofs(self, c: int) -> Tuple[np.ndarray, np.ndarray]:
        off = self.offsets(DIFFUSION_FIELDS)
        idx = np.concatenate([off["zeta"] + self.cell_flux[c], off["phi"] + self.cell_scalar(c)])
        return idx, np.concatenate([self.sign_flux[c], np.ones(self.n_k)])

    def biot_fixed(self) -> np.ndarray:
        off = self.offsets(BIOT_FIELDS)
        return np.concatenate([off["sigma"] + self.sigma_fixed, off["z"] + self.flux_fixed])

    def diffusion_fixed(self) -> np.ndarray:
        return self.offsets(DIFFUSION_FIELDS)["zeta"] + self.flux_fixed

    def counts(self) -> Dict[str, int]:
        return dict(self.sizes)


def number_dofs(mesh: PolyMesh, k: int) -> GlobalDofMap:
    if k < 1:
        raise ValueError(f"polynomial degree must be >= 1, got {k}")
    missing = [int(e) for e in mesh.boundary_edges if int(e) not in mesh.tags]
    if missing:
        raise MeshError(f"{len(missing)} untagged boundary edges, first {tuple(mesh.edges[missing[0]])}")
    return GlobalDofMap(mesh, k)


# ---------------------------------------------------------------------------
# Local spaces
# ---------------------------------------------------------------------------

@dataclass
class CellSpaces:
    ws: BasisWorkspace
    hr: HRLocalSpace
    hdiv: HdivLocalSpace
    biot: np.ndarray  # local Biot matrix, order [sigma, p, u, z]
    coupling: np.ndarray  # local D_h, rows [sigma, p], columns concentration coefficients
    diffusion_static: np.ndarray  # b / -c part of the local diffusion matrix, order [zeta, phi]

    def translated(self, geometry) -> "CellSpaces":
        return CellSpaces(self.ws.translated(geometry), self.hr.translated(geometry),
                          self.hdiv.translated(geometry), self.biot, self.coupling, self.diffusion_static)


def local_biot_matrix(hr: HRLocalSpace, hdiv: HdivLocalSpace, params: MaterialParams) -> np.ndarray:
    ws = hr.ws
    ns, nk, nz = hr.n_dofs, ws.n_k, hdiv.n_dofs
    u0, z0 = ns + nk, ns + 3 * nk
    out = np.zeros((z0 + nz, z0 + nz))
    out[:u0, :u0] = hr.local_A()
    b_u = hr.local_B_div()
    out[u0:z0, :ns] = b_u
    out[:ns, u0:z0] = b_u.T
    b_z = ws.mass @ hdiv.div_matrix
    out[ns:u0, z0:] = b_z
    out[z0:, ns:u0] = b_z.T
    out[z0:, z0:] = -hdiv.local_C(params)
    return out


def local_diffusion_static(hdiv: HdivLocalSpace) -> np.ndarray:
    nz, nk = hdiv.n_dofs, hdiv.ws.n_k
    out = np.zeros((nz + nk, nz + nk))
    b = hdiv.local_b()
    out[nz:, :nz] = b
    out[:nz, nz:] = b.T
    out[nz:, nz:] = -hdiv.ws.mass
    return out


def _signature(mesh: PolyMesh, c: int) -> tuple:
    geo = mesh.geometry(c)
    rel = np.round((geo.vertices - geo.centroid) / (1e-12 * geo.h)).astype(np.int64)
    return (float(f"{geo.h:.13e}"), tuple(rel.ravel().tolist()), tuple(mesh.cell_signs[c].tolist()))


class LocalSpaces:
    """Per-cell local spaces and the state-independent local matrices.

    Cells whose vertex sets are translates of each other (same edge signs) share one
    set of matrices; only the absolute quadrature points differ.
    """

    def __init__(self, mesh: PolyMesh, k: int, params: MaterialParams, s1_trace: str = DEFAULT_S1_TRACE,
                 quad_degree: Optional[int] = None, workers: int = 1):
        self.k = k
        self.params = params
        keys = [_signature(mesh, c) for c in range(mesh.n_cells)]
        first: Dict[tuple, int] = {}
        for c, key in enumerate(keys):
            first.setdefault(key, c)

        def build(c: int) -> CellSpaces:
            ws = BasisWorkspace(mesh.geometry(c), k, mesh.cell_signs[c], quad_degree)
            hr = HRLocalSpace(ws, params, s1_trace)
            hdiv = HdivLocalSpace(ws)
            return CellSpaces(ws, hr, hdiv, local_biot_matrix(hr, hdiv, params), hr.local_D(),
                              local_diffusion_static(hdiv))

        unique = list(first.values())
        built = dict(zip(unique, ordered_map(build, unique, workers)))
        self.cells: List[CellSpaces] = []
        for c, key in enumerate(keys):
            src = first[key]
            self.cells.append(built[c] if src == c else built[src].translated(mesh.geometry(c)))
        self.n_unique = len(unique)
        log.debug("local spaces: %d cells, %d distinct", mesh.n_cells, self.n_unique)

    def __getitem__(self, c: int) -> CellSpaces:
        return self.cells[c]

    def __len__(self) -> int:
        return len(self.cells)

    def __iter__(self):
        return iter(self.cells)


# ---------------------------------------------------------------------------
# Sparse merge
# ---------------------------------------------------------------------------

def _merge(shape: Tuple[int, int], items: Iterable[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]],
           chunk: int = CHUNK_CELLS) -> sp.csr_matrix:
    """Sum signed local blocks (rows, row_signs, cols, col_signs, K) into a CSR matrix, cell order kept."""
    total = sp.csr_matrix(shape)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []

    def flush() -> sp.csr_matrix:
        if not rows:
            return total
        part = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)
        rows.clear()
        cols.clear()
        vals.clear()
        return total + part.tocsr()

    for r, rs, c, cs, block in items:
        signed = rs[:, None] * block * cs[None, :]
        nz_r, nz_c = np.nonzero(signed)
        rows.append(r[nz_r])
        cols.append(c[nz_c])
        vals.append(signed[nz_r, nz_c])
        if len(rows) >= chunk:
            total = flush()
    total = flush()
    total.sum_duplicates()
    return total


def _scatter(size: int, items: Iterable[Tuple[np.ndarray, np.ndarray, np.ndarray]]) -> np.ndarray:
    out = np.zeros(size)
    for idx, signs, vec in items:
        np.add.at(out, idx, signs * vec)
    return out


def gather(x: np.ndarray, idx: np.ndarray, signs: np.ndarray) -> np.ndarray:
    return signs * x[idx]


# ---------------------------------------------------------------------------
# Block systems
# ---------------------------------------------------------------------------

@dataclass
class BlockSystem:
    """Reduced system over the free DoFs; constrained DoFs carry prescribed values."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    free: np.ndarray
    fixed: np.ndarray
    fixed_values: np.ndarray
    size: int
    full_matrix: Optional[sp.csr_matrix] = field(default=None, repr=False)
    full_rhs: Optional[np.ndarray] = field(default=None, repr=False)

    def expand(self, x_free: np.ndarray) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.free] = x_free
        out[self.fixed] = self.fixed_values
        return out


def reduce_system(matrix: sp.csr_matrix, rhs: np.ndarray, fixed: np.ndarray,
                  fixed_values: Optional[np.ndarray] = None, keep_full: bool = False) -> BlockSystem:
    """Symmetric elimination: K_ff x_f = b_f - K_fc x_c."""
    n = matrix.shape[0]
    fixed = np.asarray(fixed, dtype=np.int64)
    values = np.zeros(len(fixed)) if fixed_values is None else np.asarray(fixed_values, dtype=float)
    if values.shape != fixed.shape:
        raise ValueError(f"{len(values)} prescribed values for {len(fixed)} constrained DoFs")
    order = np.argsort(fixed, kind="stable")
    fixed, values = fixed[order], values[order]
    if len(fixed) > 1 and np.any(np.diff(fixed) == 0):
        raise ValueError("constrained DoF listed twice")
    mask = np.ones(n, dtype=bool)
    mask[fixed] = False
    free = np.nonzero(mask)[0]
    reduced = matrix[free][:, free].tocsr()
    b = rhs[free]
    if len(fixed) and np.any(values):
        b = b - matrix[free][:, fixed] @ values
    return BlockSystem(reduced, b, free, fixed, values, n,
                       matrix if keep_full else None, rhs if keep_full else None)


@dataclass
class Functionals:
    """F over (sigma, p), G over (u, z), H over zeta, I over phi, in Biot/diffusion system order."""

    F: np.ndarray
    G: np.ndarray
    H: np.ndarray
    I: np.ndarray  # noqa: E741

    def biot(self) -> np.ndarray:
        return np.concatenate([self.F, self.G])

    def diffusion(self) -> np.ndarray:
        return np.concatenate([self.H, self.I])


def assemble_functionals(mesh: PolyMesh, dmap: GlobalDofMap, case: Optional["ManufacturedCase"],
                         spaces: LocalSpaces, npoints: Optional[int] = None) -> Functionals:
    off_b = dmap.offsets(BIOT_FIELDS)
    n_sp = dmap.sizes["sigma"] + dmap.sizes["p"]
    F = np.zeros(n_sp)
    G = np.zeros(dmap.n_biot - n_sp)
    H = np.zeros(dmap.sizes["zeta"])
    I = np.zeros(dmap.sizes["phi"])  # noqa: E741
    if case is None:
        return Functionals(F, G, H, I)
    z_off = off_b["z"] - n_sp

    for c in range(mesh.n_cells):
        cs = spaces[c]
        ws = cs.ws
        pts, w = ws.rule.points, ws.rule.weights
        scalar = ws.values[:, :ws.n_k]
        F[dmap.sizes["sigma"] + dmap.cell_scalar(c)] += np.einsum("q,q,qi->i", w, case.g(pts), scalar)
        f = case.f(pts)
        G[dmap.cell_vector(c)] -= np.concatenate([np.einsum("q,q,qi->i", w, f[:, 0], scalar),
                                                   np.einsum("q,q,qi->i", w, f[:, 1], scalar)])
        I[dmap.cell_scalar(c)] -= np.einsum("q,q,qi->i", w, case.ell(pts), scalar)

        for i, e in enumerate(mesh.cell_edges[c]):
            e = int(e)
            if mesh.tags.get(e) != BoundaryTag.DIRICHLET:
                continue
            s = float(mesh.cell_signs[c][i])
            F[e * dmap.sigma_edge + np.arange(dmap.sigma_edge)] += s * cs.hr.edge_traction_load(i, case.u, npoints)
            fl = e * dmap.flux_edge + np.arange(dmap.flux_edge)
            G[z_off + fl] += s * cs.hdiv.edge_flux_load(i, case.p, npoints)
            H[fl] -= s * cs.hdiv.edge_flux_load(i, case.phi, npoints)
    return Functionals(F, G, H, I)


def essential_values(mesh: PolyMesh, dmap: GlobalDofMap, spaces: LocalSpaces,
                     case: Optional["ManufacturedCase"], mode: str = "exact",
                     npoints: Optional[int] = None) -> Dict[str, np.ndarray]:
    """Prescribed global values on the Gamma_N edge DoFs of sigma, z and zeta."""
    if mode not in ESSENTIAL_MODES:
        raise ValueError(f"unknown essential mode {mode!r}, expected one of {ESSENTIAL_MODES}")
    sigma = np.zeros(len(dmap.sigma_fixed))
    z = np.zeros(len(dmap.flux_fixed))
    zeta = np.zeros(len(dmap.flux_fixed))
    if mode == "zero" or case is None:
        return {"sigma": sigma, "z": z, "zeta": zeta}
    for pos, e in enumerate(dmap.neumann_edges):
        c = mesh.edge_cells[e][0]
        i = int(np.nonzero(mesh.cell_edges[c] == e)[0][0])
        s = float(mesh.cell_signs[c][i])
        cs = spaces[c]
        sigma[pos * dmap.sigma_edge:(pos + 1) * dmap.sigma_edge] = s * cs.hr.edge_moments(i, case.sigma, npoints)
        sl = slice(pos * dmap.flux_edge, (pos + 1) * dmap.flux_edge)
        z[sl] = s * cs.hdiv.edge_dofs(i, case.z, npoints=npoints)
        zeta[sl] = s * cs.hdiv.edge_dofs(i, case.zeta, npoints=npoints)
    return {"sigma": sigma, "z": z, "zeta": zeta}


class BiotProblem:
    """The phi-independent part of the Biot system; `system(phi)` only rebuilds the right-hand side."""

    def __init__(self, mesh: PolyMesh, dmap: GlobalDofMap, spaces: LocalSpaces,
                 loads: Functionals, fixed_values: Dict[str, np.ndarray]):
        self.dmap = dmap
        n = dmap.n_biot
        cell_dofs = [dmap.biot_cell_dofs(c) for c in range(mesh.n_cells)]
        self.matrix = _merge((n, n), ((idx, s, idx, s, spaces[c].biot) for c, (idx, s) in enumerate(cell_dofs)))
        ones = np.ones(dmap.n_k)

        def coupling_items():
            for c, (idx, s) in enumerate(cell_dofs):
                rows = spaces[c].coupling.shape[0]
                yield idx[:rows], s[:rows], dmap.cell_scalar(c), ones, spaces[c].coupling

        self.coupling = _merge((n, dmap.sizes["phi"]), coupling_items())
        self.loads = loads.biot()
        self.fixed = dmap.biot_fixed()
        self.fixed_values = np.concatenate([fixed_values["sigma"], fixed_values["z"]])
        self._template = reduce_system(self.matrix, np.zeros(n), self.fixed, self.fixed_values)
        self._lift = -self._template.rhs

    def rhs(self, phi: np.ndarray) -> np.ndarray:
        return self.loads - self.coupling @ phi

    def system(self, phi: np.ndarray, keep_full: bool = False) -> BlockSystem:
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dmap.sizes["phi"],):
            raise ValueError(f"concentration vector has shape {phi.shape}, expected ({self.dmap.sizes['phi']},)")
        rhs = self.rhs(phi)
        t = self._template
        b = rhs[t.free] - self._lift
        return BlockSystem(t.matrix, b, t.free, t.fixed, t.fixed_values, t.size,
                           self.matrix if keep_full else None, rhs if keep_full else None)


class DiffusionProblem:
    def __init__(self, mesh: PolyMesh, dmap: GlobalDofMap, spaces: LocalSpaces, params: MaterialParams,
                 loads: Functionals, fixed_values: Dict[str, np.ndarray], workers: int = 1):
        self.mesh = mesh
        self.dmap = dmap
        self.spaces = spaces
        self.params = params
        self.workers = workers
        n = dmap.n_diffusion
        self.cell_dofs = [dmap.diffusion_cell_dofs(c) for c in range(mesh.n_cells)]
        self.static = _merge((n, n), ((idx, s, idx, s, spaces[c].diffusion_static)
                                      for c, (idx, s) in enumerate(self.cell_dofs)))
        self.loads = loads.diffusion()
        self.fixed = dmap.diffusion_fixed()
        self.fixed_values = fixed_values["zeta"]

    def flux_block(self, sigma_proj: Optional[Sequence[np.ndarray]]) -> sp.csr_matrix:
        """a_h over zeta, rho^-1 taken at the trace of the projected stress (zero stress if None)."""

        def local(c: int) -> np.ndarray:
            cs = self.spaces[c]
            trace = None if sigma_proj is None else cs.hr.trace_values(sigma_proj[c])
            return cs.hdiv.local_a(self.params, trace)

        blocks = ordered_map(local, list(range(self.mesh.n_cells)), self.workers)

        def items():
            for c, (idx, s) in enumerate(self.cell_dofs):
                nz = blocks[c].shape[0]
                yield idx[:nz], s[:nz], idx[:nz], s[:nz], blocks[c]

        n = self.dmap.n_diffusion
        return _merge((n, n), items())

    def system(self, sigma_proj: Optional[Sequence[np.ndarray]], keep_full: bool = False) -> BlockSystem:
        matrix = (self.static + self.flux_block(sigma_proj)).tocsr()
        return reduce_system(matrix, self.loads, self.fixed, self.fixed_values, keep_full)


def assemble_biot(mesh: PolyMesh, dmap: GlobalDofMap, params: MaterialParams, phi_state: np.ndarray,
                  case: Optional["ManufacturedCase"] = None, spaces: Optional[LocalSpaces] = None,
                  essential: str = "exact", keep_full: bool = False) -> BlockSystem:
    spaces = spaces or LocalSpaces(mesh, dmap.k, params)
    loads = assemble_functionals(mesh, dmap, case, spaces)
    fixed = essential_values(mesh, dmap, spaces, case, essential)
    return BiotProblem(mesh, dmap, spaces, loads, fixed).system(phi_state, keep_full)


def assemble_diffusion(mesh: PolyMesh, dmap: GlobalDofMap, params: MaterialParams,
                       sigma_states: Optional[Sequence[np.ndarray]],
                       case: Optional["ManufacturedCase"] = None, spaces: Optional[LocalSpaces] = None,
                       essential: str = "exact", keep_full: bool = False) -> BlockSystem:
    """`sigma_states` holds the per-cell C-energy projection coefficients of the stress."""
    spaces = spaces or LocalSpaces(mesh, dmap.k, params)
    if sigma_states is not None and len(sigma_states) != mesh.n_cells:
        raise ValueError(f"{len(sigma_states)} stress projections for {mesh.n_cells} cells")
    loads = assemble_functionals(mesh, dmap, case, spaces)
    fixed = essential_values(mesh, dmap, spaces, case, essential)
    return DiffusionProblem(mesh, dmap, spaces, params, loads, fixed).system(sigma_states, keep_full)


# ---------------------------------------------------------------------------
# Per-cell views of a solution
# ---------------------------------------------------------------------------

def project_stress(dmap: GlobalDofMap, spaces: LocalSpaces, sigma: np.ndarray) -> List[np.ndarray]:
    return [spaces[c].hr.project(gather(sigma, dmap.cell_sigma[c], dmap.sign_sigma[c]))
            for c in range(dmap.n_cells)]


def interpolate_state(mesh: PolyMesh, dmap: GlobalDofMap, spaces: LocalSpaces, case: "ManufacturedCase",
                      mode: str = "projected") -> Dict[str, np.ndarray]:
    """DoF interpolants of the exact fields; u, p, phi as cellwise L2 projections."""
    out = {name: np.zeros(size) for name, size in dmap.sizes.items()}
    for c in range(mesh.n_cells):
        cs = spaces[c]
        ws = cs.ws
        s_idx, s_sign = dmap.cell_sigma[c], dmap.sign_sigma[c]
        out["sigma"][s_idx] = s_sign * cs.hr.interpolate(case.sigma, case.div_sigma)
        f_idx, f_sign = dmap.cell_flux[c], dmap.sign_flux[c]
        out["z"][f_idx] = f_sign * cs.hdiv.interpolate(case.z, mode)
        out["zeta"][f_idx] = f_sign * cs.hdiv.interpolate(case.zeta, mode)
        scalar = ws.values[:, :ws.n_k]
        w = ws.rule.weights
        for name, fn in (("p", case.p), ("phi", case.phi)):
            out[name][dmap.cell_scalar(c)] = np.linalg.solve(ws.mass, np.einsum("q,q,qi->i", w, fn(ws.rule.points), scalar))
        u = case.u(ws.rule.points)
        out["u"][dmap.cell_vector(c)] = np.concatenate([
            np.linalg.solve(ws.mass, np.einsum("q,q,qi->i", w, u[:, comp], scalar)) for comp in (0, 1)])
    return out


def conservation_residuals(mesh: PolyMesh, dmap: GlobalDofMap, spaces: LocalSpaces, params: MaterialParams,
                           fields: Dict[str, np.ndarray], case: Optional["ManufacturedCase"] = None,
                           phi_hat: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """Per-cell max-abs residuals (in monomial coefficients) of the momentum, mass and diffusion balances.

    `phi_hat` is the concentration the Biot solve was driven by (defaults to fields["phi"]).
    """
    phi_hat = fields["phi"] if phi_hat is None else phi_hat
    ls = params.lame_sum
    out = {"momentum": np.zeros(mesh.n_cells), "mass": np.zeros(mesh.n_cells), "diffusion": np.zeros(mesh.n_cells)}
    for c in range(mesh.n_cells):
        cs = spaces[c]
        ws = cs.ws
        nk = ws.n_k
        scalar = ws.values[:, :nk]
        w, pts = ws.rule.weights, ws.rule.points
        sig = gather(fields["sigma"], dmap.cell_sigma[c], dmap.sign_sigma[c])
        z = gather(fields["z"], dmap.cell_flux[c], dmap.sign_flux[c])
        zeta = gather(fields["zeta"], dmap.cell_flux[c], dmap.sign_flux[c])
        p = fields["p"][dmap.cell_scalar(c)]
        phi = fields["phi"][dmap.cell_scalar(c)]
        phi_b = phi_hat[dmap.cell_scalar(c)]

        def l2(values: np.ndarray) -> np.ndarray:
            return np.linalg.solve(ws.mass, np.einsum("q,q,qi->i", w, values, scalar))

        if case is None:
            f_proj, g_proj, ell_proj = np.zeros(2 * nk), np.zeros(nk), np.zeros(nk)
        else:
            f = case.f(pts)
            f_proj = np.concatenate([l2(f[:, 0]), l2(f[:, 1])])
            g_proj, ell_proj = l2(case.g(pts)), l2(case.ell(pts))
        momentum = cs.hr.divergence(sig) + f_proj
        trace = np.linalg.solve(ws.mass, cs.hr.trace_moments.T @ cs.hr.project(sig))
        mass = (params.alpha / ls * trace + (params.s0 + 2.0 * params.alpha ** 2 / ls) * p
                + cs.hdiv.divergence(z) + 2.0 * params.alpha * params.beta / ls * phi_b - g_proj)
        diffusion = cs.hdiv.divergence(zeta) + phi - ell_proj
        out["momentum"][c] = np.abs(momentum).max()
        out["mass"][c] = np.abs(mass).max()
        out["diffusion"][c] = np.abs(diffusion).max()
    return out


# ---------------------------------------------------------------------------
# Discrete property probes (dense: small meshes only)
# ---------------------------------------------------------------------------

def _min_sym_eig(matrix) -> float:
    dense = matrix.toarray() if sp.issparse(matrix) else np.asarray(matrix)
    return float(scipy.linalg.eigvalsh(0.5 * (dense + dense.T))[0])


def _inf_sup(b: np.ndarray, norm_rows: np.ndarray, norm_cols: np.ndarray) -> float:
    """inf over rows-space y of sup over cols-space x of y^T b x / (|y|_rows |x|_cols)."""
    schur = b @ scipy.linalg.solve(norm_cols, b.T, assume_a="sym")
    eigs = scipy.linalg.eigh(0.5 * (schur + schur.T), norm_rows, eigvals_only=True)
    return float(np.sqrt(max(eigs[0], 0.0)))


def property_probes(mesh: PolyMesh, dmap: GlobalDofMap, params: MaterialParams,
                    spaces: Optional[LocalSpaces] = None) -> Dict[str, float]:
    """Matrix-level semi-definiteness and inf-sup witnesses of the assembled blocks."""
    spaces = spaces or LocalSpaces(mesh, dmap.k, params)
    problem = BiotProblem(mesh, dmap, spaces, assemble_functionals(mesh, dmap, None, spaces),
                          essential_values(mesh, dmap, spaces, None, "zero"))
    K = problem.matrix.toarray()
    off = dmap.offsets(BIOT_FIELDS)
    ns, npr, nu = dmap.sizes["sigma"], dmap.sizes["p"], dmap.sizes["u"]
    a_block = K[:ns + npr, :ns + npr]
    c_block = -K[off["z"]:, off["z"]:]
    b_u = K[off["u"]:off["z"], :ns]

    diff = DiffusionProblem(mesh, dmap, spaces, params, assemble_functionals(mesh, dmap, None, spaces),
                            essential_values(mesh, dmap, spaces, None, "zero"))
    nz = dmap.sizes["zeta"]
    a_diff = diff.flux_block(None).toarray()[:nz, :nz]
    static = diff.static.toarray()
    b_diff = static[nz:, :nz]
    c_diff = -static[nz:, nz:]

    mass_u = sp.block_diag([spaces[c].ws.vec_mass for c in range(mesh.n_cells)]).toarray()
    mass_phi = c_diff
    sigma_norm = a_block[:ns, :ns] + b_u.T @ scipy.linalg.solve(mass_u, b_u, assume_a="pos")
    flux_norm = a_diff + b_diff.T @ scipy.linalg.solve(mass_phi, b_diff, assume_a="pos")
    return {
        "A_min_eig": _min_sym_eig(a_block),
        "C_min_eig": _min_sym_eig(c_block),
        "a_min_eig": _min_sym_eig(a_diff),
        "c_min_eig": _min_sym_eig(c_diff),
        "biot_inf_sup": _inf_sup(b_u, mass_u, sigma_norm),
        "diffusion_inf_sup": _inf_sup(b_diff, mass_phi, flux_norm),
    }
