"""
Porovem — Block solves and the Picard driver.

Sparse LU (SuperLU through scipy) with a few steps of iterative refinement for the
reduced Biot and diffusion systems, and the fixed-point loop that alternates them:
Biot with the previous concentration, per-cell C-energy projection of the stress,
diffusion with rho^-1 evaluated at the projected stress trace.
"""

from __future__ import annotations

import logging
import pathlib
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from porovem.assembly import (
    BIOT_FIELDS,
    DIFFUSION_FIELDS,
    BiotProblem,
    BlockSystem,
    DiffusionProblem,
    GlobalDofMap,
    LocalSpaces,
    assemble_functionals,
    essential_values,
    project_stress,
)
from porovem.hr_space import DEFAULT_S1_TRACE
from porovem.mesh import PolyMesh
from porovem.model import MaterialParams
from porovem.utils import append_jsonl, utc_now_iso

log = logging.getLogger(__name__)

LINEAR_SOLVER = "scipy.sparse.linalg.splu (SuperLU, COLAMD ordering)"
RESIDUAL_WARN = 1e-10
REFINE_STEPS = 3
NORM_TYPES = ("all", "phi")
ALL_FIELDS = BIOT_FIELDS + DIFFUSION_FIELDS


class SolverError(RuntimeError):
    """Factorization failure or singular system; `rows` names offending rows when located."""

    def __init__(self, message: str, rows: Sequence[int] = ()):
        self.rows = tuple(int(r) for r in rows)
        if self.rows:
            shown = ", ".join(str(r) for r in self.rows[:8])
            message = f"{message} (rows {shown}{', ...' if len(self.rows) > 8 else ''})"
        super().__init__(message)


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------

def _suspect_rows(matrix: sp.csc_matrix) -> np.ndarray:
    """Rows or columns without a single stored nonzero."""
    csr = matrix.tocsr()
    csr.eliminate_zeros()
    empty_rows = np.nonzero(np.diff(csr.indptr) == 0)[0]
    csc = csr.tocsc()
    empty_cols = np.nonzero(np.diff(csc.indptr) == 0)[0]
    return np.union1d(empty_rows, empty_cols)


class Factorization:
    """LU factors of one square sparse matrix plus refinement against the original."""

    def __init__(self, matrix, label: str = "system"):
        self.label = label
        self.matrix = sp.csc_matrix(matrix)
        n, m = self.matrix.shape
        if n != m:
            raise SolverError(f"{label} matrix is not square: {n}x{m}")
        self.n = n
        if n == 0:
            self._lu = None
            return
        bad = _suspect_rows(self.matrix)
        if len(bad):
            raise SolverError(f"{label} matrix has empty rows/columns", bad)
        try:
            self._lu = spla.splu(self.matrix, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise SolverError(f"{label} factorization failed: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> Tuple[np.ndarray, float]:
        """Solution and final relative residual |Ax - b| / |b|."""
        b = np.asarray(rhs, dtype=float)
        if b.shape != (self.n,):
            raise SolverError(f"{self.label} right-hand side has shape {b.shape}, expected ({self.n},)")
        norm_b = float(np.linalg.norm(b))
        if self.n == 0 or norm_b == 0.0:
            return np.zeros(self.n), 0.0
        x = self._lu.solve(b)
        r = b - self.matrix @ x
        res = float(np.linalg.norm(r)) / norm_b
        for _ in range(REFINE_STEPS):
            if not np.isfinite(res) or res <= 1e-3 * RESIDUAL_WARN:
                break
            candidate = x + self._lu.solve(r)
            r_new = b - self.matrix @ candidate
            res_new = float(np.linalg.norm(r_new)) / norm_b
            if res_new >= res:
                break
            x, r, res = candidate, r_new, res_new
        if not np.isfinite(res):
            raise SolverError(f"{self.label} solve produced non-finite values (singular matrix?)")
        if res > RESIDUAL_WARN:
            log.warning("%s solve: relative residual %.3e above %.0e after refinement", self.label, res, RESIDUAL_WARN)
        return x, res


def solve_sparse(matrix, rhs: np.ndarray, label: str = "system") -> Tuple[np.ndarray, float]:
    return Factorization(matrix, label).solve(rhs)


def solve_block(system: BlockSystem, factor: Optional[Factorization] = None,
                residuals: Optional[List[float]] = None) -> np.ndarray:
    """Full coefficient vector (free DoFs solved, constrained DoFs at their prescribed values)."""
    factor = factor or Factorization(system.matrix)
    x, res = factor.solve(system.rhs)
    if residuals is not None:
        residuals.append(res)
    return system.expand(x)


# ---------------------------------------------------------------------------
# Picard fixed point
# ---------------------------------------------------------------------------

@dataclass
class FieldState:
    sigma: np.ndarray
    p: np.ndarray
    u: np.ndarray
    z: np.ndarray
    zeta: np.ndarray
    phi: np.ndarray

    @classmethod
    def zeros(cls, dmap: GlobalDofMap) -> "FieldState":
        return cls(**{name: np.zeros(dmap.sizes[name]) for name in ALL_FIELDS})

    @classmethod
    def from_vectors(cls, dmap: GlobalDofMap, biot: np.ndarray, diffusion: np.ndarray) -> "FieldState":
        return cls(**dmap.split(biot, BIOT_FIELDS), **dmap.split(diffusion, DIFFUSION_FIELDS))

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in ALL_FIELDS}

    def concatenate(self, fields: Sequence[str] = ALL_FIELDS) -> np.ndarray:
        return np.concatenate([getattr(self, name) for name in fields])

    def check(self, dmap: GlobalDofMap) -> None:
        for name in ALL_FIELDS:
            got = getattr(self, name).shape
            if got != (dmap.sizes[name],):
                raise ValueError(f"field {name} has shape {got}, expected ({dmap.sizes[name]},)")


@dataclass(frozen=True)
class FixedPointConfig:
    tol: float = 5e-6
    max_iter: int = 50
    norm: str = "all"
    relative: bool = False
    initial_phi: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.tol > 0.0:
            raise ValueError(f"picard tolerance must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"picard max_iter must be >= 1, got {self.max_iter}")
        if self.norm not in NORM_TYPES:
            raise ValueError(f"unknown increment norm {self.norm!r}, expected one of {NORM_TYPES}")

    @property
    def norm_fields(self) -> Tuple[str, ...]:
        return ALL_FIELDS if self.norm == "all" else ("phi",)


@dataclass
class SolveReport:
    iterations: int = 0
    increments: List[float] = field(default_factory=list)
    biot_residuals: List[float] = field(default_factory=list)
    diffusion_residuals: List[float] = field(default_factory=list)
    wall_time: float = 0.0
    converged: bool = False
    linear_solver: str = LINEAR_SOLVER
    initial_guess: str = "zero"
    phi_hat: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def final_increment(self) -> float:
        return self.increments[-1] if self.increments else float("inf")

    @property
    def contraction_ratios(self) -> List[float]:
        inc = self.increments
        return [inc[i + 1] / inc[i] if inc[i] > 0 else 0.0 for i in range(len(inc) - 1)]

    @property
    def max_linear_residual(self) -> float:
        return max(self.biot_residuals + self.diffusion_residuals, default=0.0)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "increments": list(self.increments),
            "contraction_ratios": self.contraction_ratios,
            "biot_residuals": list(self.biot_residuals),
            "diffusion_residuals": list(self.diffusion_residuals),
            "wall_time": round(self.wall_time, 4),
            "linear_solver": self.linear_solver,
            "initial_guess": self.initial_guess,
        }


def increment_norm(new: FieldState, old: FieldState, config: FixedPointConfig) -> float:
    a = new.concatenate(config.norm_fields)
    diff = float(np.linalg.norm(a - old.concatenate(config.norm_fields)))
    if config.relative:
        scale = float(np.linalg.norm(a))
        return diff / scale if scale > 0.0 else diff
    return diff


class PicardDriver:
    """Holds the assembled Biot problem (factorised once) and the diffusion problem."""

    def __init__(self, mesh: PolyMesh, dmap: GlobalDofMap, params: MaterialParams, case=None,
                 spaces: Optional[LocalSpaces] = None, essential: str = "exact", workers: int = 1,
                 s1_trace: str = DEFAULT_S1_TRACE):
        self.mesh = mesh
        self.dmap = dmap
        self.params = params
        self.spaces = spaces or LocalSpaces(mesh, dmap.k, params, s1_trace=s1_trace, workers=workers)
        loads = assemble_functionals(mesh, dmap, case, self.spaces)
        fixed = essential_values(mesh, dmap, self.spaces, case, essential)
        self.biot = BiotProblem(mesh, dmap, self.spaces, loads, fixed)
        self.diffusion = DiffusionProblem(mesh, dmap, self.spaces, params, loads, fixed, workers)
        self._biot_factor: Optional[Factorization] = None

    def sweep(self, phi_hat: np.ndarray, report: Optional[SolveReport] = None) -> FieldState:
        """One application of the Biot solve followed by the diffusion solve."""
        biot_sys = self.biot.system(phi_hat)
        if self._biot_factor is None:
            self._biot_factor = Factorization(biot_sys.matrix, "Biot")
        biot_x = solve_block(biot_sys, self._biot_factor, report.biot_residuals if report else None)
        sigma = self.dmap.split(biot_x, BIOT_FIELDS)["sigma"]
        diff_sys = self.diffusion.system(project_stress(self.dmap, self.spaces, sigma))
        diff_x = solve_block(diff_sys, Factorization(diff_sys.matrix, "diffusion"),
                             report.diffusion_residuals if report else None)
        return FieldState.from_vectors(self.dmap, biot_x, diff_x)

    def run(self, config: Optional[FixedPointConfig] = None,
            events_path: Optional[pathlib.Path] = None) -> Tuple[FieldState, SolveReport]:
        config = config or FixedPointConfig()
        t0 = time.perf_counter()
        report = SolveReport()
        state = FieldState.zeros(self.dmap)
        if config.initial_phi is not None:
            state.phi = np.array(config.initial_phi, dtype=float)
            state.check(self.dmap)
            report.initial_guess = "given"

        best: Tuple[float, FieldState, np.ndarray] = (float("inf"), state, state.phi)
        for it in range(1, config.max_iter + 1):
            phi_hat = state.phi
            new = self.sweep(phi_hat, report)
            inc = increment_norm(new, state, config)
            report.increments.append(inc)
            report.iterations = it
            log.info("picard it=%d increment=%.3e", it, inc)
            append_jsonl(events_path, {
                "ts": utc_now_iso(), "type": "picard_iteration", "iteration": it, "increment": inc,
                "biot_residual": report.biot_residuals[-1], "diffusion_residual": report.diffusion_residuals[-1],
            })
            state = new
            if inc <= best[0]:
                best = (inc, new, phi_hat)
            if inc <= config.tol:
                report.converged = True
                break

        if report.converged:
            report.phi_hat = phi_hat
        else:
            log.warning("picard did not converge in %d iterations (last increment %.3e, tol %.1e)",
                        config.max_iter, report.final_increment, config.tol)
            _, state, report.phi_hat = best
        report.wall_time = time.perf_counter() - t0
        return state, report


def picard(mesh: PolyMesh, dmap: GlobalDofMap, params: MaterialParams, case=None,
           config: Optional[FixedPointConfig] = None, spaces: Optional[LocalSpaces] = None,
           essential: str = "exact", workers: int = 1, events_path: Optional[pathlib.Path] = None,
           s1_trace: str = DEFAULT_S1_TRACE) -> Tuple[FieldState, SolveReport]:
    driver = PicardDriver(mesh, dmap, params, case, spaces, essential, workers, s1_trace)
    return driver.run(config, events_path)
