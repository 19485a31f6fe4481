"""
Porovem — Polygonal meshes.

PolyMesh holds vertices, counter-clockwise cells, globally oriented edges and
boundary tags. Generators for the structured families, the text mesh format,
boundary tagging, per-cell geometry and validation live here too.
"""

from __future__ import annotations

import enum
import io
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np

log = logging.getLogger(__name__)

COORD_TOL = 1e-12
SHAPE_WARN_ETA = 0.05


class MeshError(ValueError):
    """Invalid mesh topology or geometry."""


class MeshFormatError(MeshError):
    """Malformed mesh text."""

    def __init__(self, message: str, line: int = 0):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class GeometryError(MeshError):
    """Degenerate cell or singular local matrix."""


class BoundaryTag(str, enum.Enum):
    DIRICHLET = "D"
    NEUMANN = "N"


# ---------------------------------------------------------------------------
# Cell geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellGeometry:
    vertices: np.ndarray  # (m, 2), counter-clockwise
    area: float
    centroid: np.ndarray  # x_K
    diameter: float  # h_K
    edge_lengths: np.ndarray  # h_f per local edge (v_i -> v_{i+1})
    edge_normals: np.ndarray  # outward unit normals

    @property
    def h(self) -> float:
        return self.diameter

    @property
    def n_edges(self) -> int:
        return len(self.vertices)

    @property
    def eta(self) -> float:
        """min h_f / h_K, monitored for shape regularity."""
        return float(self.edge_lengths.min() / self.diameter)


def signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_geometry(vertices: Union[np.ndarray, Sequence[Sequence[float]]]) -> CellGeometry:
    """Shoelace area, polygon barycentre, vertex-pair diameter and outward edge normals."""
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise GeometryError(f"polygon needs at least 3 planar vertices, got shape {v.shape}")
    diffs = v[:, None, :] - v[None, :, :]
    diameter = float(np.sqrt((diffs ** 2).sum(axis=-1)).max())
    area = signed_area(v)
    if diameter <= 0.0 or area <= 1e-14 * diameter ** 2:
        raise GeometryError(f"degenerate or clockwise polygon (area={area:.3e}, h={diameter:.3e})")

    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    centroid = np.array([np.dot(x + xn, cross), np.dot(y + yn, cross)]) / (6.0 * area)

    tangents = np.roll(v, -1, axis=0) - v
    lengths = np.sqrt((tangents ** 2).sum(axis=1))
    if lengths.min() <= 1e-14 * diameter:
        raise GeometryError("polygon has a zero-length edge")
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]]) / lengths[:, None]
    return CellGeometry(v, area, centroid, diameter, lengths, normals)


def is_simple_polygon(vertices: np.ndarray) -> bool:
    """True when no two non-adjacent edges intersect."""
    v = np.asarray(vertices, dtype=float)
    m = len(v)
    for i in range(m):
        p1, p2 = v[i], v[(i + 1) % m]
        for j in range(i + 1, m):
            if j == i or (j + 1) % m == i or (i + 1) % m == j:
                continue
            if _segments_intersect(p1, p2, v[j], v[(j + 1) % m]):
                return False
    return True


def _segments_intersect(a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray) -> bool:
    def orient(p, q, r) -> float:
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    scale = max(np.abs(np.concatenate([a, b, c, d])).max(), 1.0)
    tol = 1e-14 * scale * scale
    o1, o2, o3, o4 = orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b)
    if ((o1 > tol and o2 < -tol) or (o1 < -tol and o2 > tol)) and \
            ((o3 > tol and o4 < -tol) or (o3 < -tol and o4 > tol)):
        return True

    def on_segment(p, q, r) -> bool:
        return min(p[0], q[0]) - tol <= r[0] <= max(p[0], q[0]) + tol and \
            min(p[1], q[1]) - tol <= r[1] <= max(p[1], q[1]) + tol

    return any(abs(o) <= tol and on_segment(p, q, r) for o, p, q, r in (
        (o1, a, b, c), (o2, a, b, d), (o3, c, d, a), (o4, c, d, b)))


# ---------------------------------------------------------------------------
# PolyMesh
# ---------------------------------------------------------------------------

class PolyMesh:
    """Immutable polygonal mesh with globally oriented edges.

    Edge e joins vertices (a, b) with a < b; its global unit normal is the tangent
    (b - a)/|b - a| rotated by -90 degrees. Local edge i of a cell runs from its
    vertex i to vertex i+1 and carries sign +1 iff the cell traverses it a -> b,
    i.e. iff the cell's outward normal equals the global normal.
    """

    def __init__(self, vertices: np.ndarray, cells: Sequence[Sequence[int]],
                 tags: Optional[Dict[int, BoundaryTag]] = None):
        self.vertices = np.array(vertices, dtype=float).reshape(-1, 2)
        self.vertices.setflags(write=False)
        self.cells: Tuple[Tuple[int, ...], ...] = tuple(tuple(int(i) for i in c) for c in cells)

        edge_index: Dict[Tuple[int, int], int] = {}
        edges: List[Tuple[int, int]] = []
        edge_cells: List[List[int]] = []
        cell_edges, cell_signs = [], []
        for ci, cell in enumerate(self.cells):
            ids, signs = [], []
            for i, va in enumerate(cell):
                vb = cell[(i + 1) % len(cell)]
                if va == vb:
                    raise MeshError(f"cell {ci} repeats vertex {va}")
                key = (min(va, vb), max(va, vb))
                e = edge_index.get(key)
                if e is None:
                    e = edge_index[key] = len(edges)
                    edges.append(key)
                    edge_cells.append([])
                edge_cells[e].append(ci)
                ids.append(e)
                signs.append(1 if va < vb else -1)
            cell_edges.append(np.array(ids, dtype=np.int64))
            cell_signs.append(np.array(signs, dtype=np.int64))

        self.edges = np.array(edges, dtype=np.int64).reshape(-1, 2)
        self.edges.setflags(write=False)
        self.cell_edges: Tuple[np.ndarray, ...] = tuple(cell_edges)
        self.cell_signs: Tuple[np.ndarray, ...] = tuple(cell_signs)
        self.edge_cells: Tuple[Tuple[int, ...], ...] = tuple(tuple(c) for c in edge_cells)
        self._edge_index = edge_index
        for e, inc in enumerate(self.edge_cells):
            if len(inc) > 2:
                raise MeshError(f"edge {tuple(self.edges[e])} shared by {len(inc)} cells")
        self.boundary_edges = np.array([e for e, inc in enumerate(self.edge_cells) if len(inc) == 1],
                                       dtype=np.int64)
        self.tags: Dict[int, BoundaryTag] = dict(tags or {})
        for e in self.tags:
            if len(self.edge_cells[e]) != 1:
                raise MeshError(f"tag on interior edge {tuple(self.edges[e])}")
        self._geometry: Dict[int, CellGeometry] = {}

    # --- sizes ---

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    # --- edges ---

    def edge_id(self, va: int, vb: int) -> int:
        try:
            return self._edge_index[(min(va, vb), max(va, vb))]
        except KeyError:
            raise MeshError(f"no edge between vertices {va} and {vb}") from None

    def edge_tangent(self, e: int) -> np.ndarray:
        a, b = self.edges[e]
        return self.vertices[b] - self.vertices[a]

    def edge_length(self, e: int) -> float:
        return float(np.linalg.norm(self.edge_tangent(e)))

    def edge_normal(self, e: int) -> np.ndarray:
        t = self.edge_tangent(e) / self.edge_length(e)
        return np.array([t[1], -t[0]])

    def edge_midpoint(self, e: int) -> np.ndarray:
        a, b = self.edges[e]
        return 0.5 * (self.vertices[a] + self.vertices[b])

    def is_boundary_edge(self, e: int) -> bool:
        return len(self.edge_cells[e]) == 1

    # --- cells ---

    def cell_vertices(self, c: int) -> np.ndarray:
        return self.vertices[list(self.cells[c])]

    def geometry(self, c: int) -> CellGeometry:
        geo = self._geometry.get(c)
        if geo is None:
            geo = self._geometry[c] = compute_cell_geometry(self, c)
        return geo

    @property
    def h(self) -> float:
        """Mesh size: maximum cell diameter."""
        return max(self.geometry(c).diameter for c in range(self.n_cells))

    def total_area(self) -> float:
        return float(sum(self.geometry(c).area for c in range(self.n_cells)))

    def domain_area(self) -> float:
        """|Omega| from the boundary loop alone, independent of the cell areas."""
        total = 0.0
        for e in self.boundary_edges:
            c = self.edge_cells[e][0]
            local = int(np.nonzero(self.cell_edges[c] == e)[0][0])
            a, b = self.edges[e]
            if self.cell_signs[c][local] < 0:
                a, b = b, a
            pa, pb = self.vertices[a], self.vertices[b]
            total += 0.5 * (pa[0] * pb[1] - pb[0] * pa[1])
        return total

    def with_tags(self, tags: Dict[int, BoundaryTag]) -> "PolyMesh":
        return PolyMesh(self.vertices, self.cells, tags)

    def with_vertices(self, vertices: np.ndarray) -> "PolyMesh":
        return PolyMesh(vertices, self.cells, self.tags)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolyMesh):
            return NotImplemented
        return (self.cells == other.cells and self.tags == other.tags
                and np.array_equal(self.vertices, other.vertices))

    def __repr__(self) -> str:
        return f"PolyMesh(nv={self.n_vertices}, nc={self.n_cells}, ne={self.n_edges})"


def compute_cell_geometry(mesh: PolyMesh, cell: int) -> CellGeometry:
    return polygon_geometry(mesh.cell_vertices(cell))


def shape_regularity(mesh: PolyMesh) -> float:
    return min(mesh.geometry(c).eta for c in range(mesh.n_cells))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate(mesh: PolyMesh, require_tags: bool = False) -> None:
    """Raise MeshError unless every PolyMesh invariant holds."""
    for c in range(mesh.n_cells):
        verts = mesh.cell_vertices(c)
        if signed_area(verts) <= 0.0:
            raise MeshError(f"cell {c} is not counter-clockwise with positive area")
        if not is_simple_polygon(verts):
            raise MeshError(f"cell {c} is not a simple polygon")
        geo = mesh.geometry(c)
        closure = (geo.edge_lengths[:, None] * geo.edge_normals).sum(axis=0)
        if np.abs(closure).max() > 1e-12 * geo.edge_lengths.sum():
            raise MeshError(f"cell {c}: outward normals do not close (residual {closure})")

    for e, inc in enumerate(mesh.edge_cells):
        if len(inc) == 2:
            s = [int(mesh.cell_signs[c][np.nonzero(mesh.cell_edges[c] == e)[0][0]]) for c in inc]
            if s[0] != -s[1]:
                raise MeshError(f"interior edge {e} traversed in the same direction by cells {inc}")

    used = np.zeros(mesh.n_vertices, dtype=bool)
    for cell in mesh.cells:
        used[list(cell)] = True
    if not used.all():
        raise MeshError(f"dangling vertices: {np.nonzero(~used)[0][:10].tolist()}")

    total, domain = mesh.total_area(), mesh.domain_area()
    if abs(total - domain) > 1e-10 * abs(domain):
        raise MeshError(f"cell areas sum to {total!r} but the boundary encloses {domain!r}")

    if require_tags:
        missing = [int(e) for e in mesh.boundary_edges if int(e) not in mesh.tags]
        if missing:
            raise MeshError(f"{len(missing)} untagged boundary edges, first {tuple(mesh.edges[missing[0]])}")

    eta = shape_regularity(mesh)
    if eta < SHAPE_WARN_ETA:
        log.warning("mesh shape regularity eta=%.3g below %.2f", eta, SHAPE_WARN_ETA)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def _grid_vertices(n: int) -> np.ndarray:
    xs = np.arange(n + 1) / n
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    return np.column_stack([gx.ravel(), gy.ravel()])


def build_structured_quad(n: int) -> PolyMesh:
    """n x n axis-aligned squares tiling the unit square."""
    if n < 1:
        raise MeshError(f"n must be >= 1, got {n}")

    def vid(i: int, j: int) -> int:
        return i + (n + 1) * j

    cells = [(vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
             for j in range(n) for i in range(n)]
    return PolyMesh(_grid_vertices(n), cells)


def build_triangular(n: int) -> PolyMesh:
    """Each square of the n x n grid split along its (i,j)-(i+1,j+1) diagonal."""
    if n < 1:
        raise MeshError(f"n must be >= 1, got {n}")

    def vid(i: int, j: int) -> int:
        return i + (n + 1) * j

    cells = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cells.append((a, b, c))
            cells.append((a, c, d))
    return PolyMesh(_grid_vertices(n), cells)


def boundary_vertices(mesh: PolyMesh) -> np.ndarray:
    on_boundary = np.zeros(mesh.n_vertices, dtype=bool)
    on_boundary[mesh.edges[mesh.boundary_edges].ravel()] = True
    return on_boundary


def distort_quad(mesh: PolyMesh, amplitude: float, seed: int = 0) -> PolyMesh:
    """Perturb interior vertices by uniform noise in [-amplitude, amplitude]^2."""
    if amplitude < 0.0:
        raise MeshError(f"amplitude must be >= 0, got {amplitude}")
    rng = np.random.default_rng(seed)
    interior = ~boundary_vertices(mesh)
    verts = np.array(mesh.vertices)
    noise = rng.uniform(-amplitude, amplitude, size=(int(interior.sum()), 2))
    verts[interior] += noise
    for c, cell in enumerate(mesh.cells):
        if signed_area(verts[list(cell)]) <= 0.0:
            raise MeshError(f"amplitude {amplitude} inverts cell {c}")
    return mesh.with_vertices(verts)


def build_family(family: str, n: Union[int, str], seed: int = 0,
                 distortion: Optional[float] = None) -> PolyMesh:
    """Dispatch a mesh family name to its generator (or loader for 'file')."""
    if family == "quad":
        return build_structured_quad(int(n))
    if family == "tri":
        return build_triangular(int(n))
    if family == "distorted":
        n = int(n)
        amplitude = 0.2 * 0.5 / n if distortion is None else float(distortion)
        return distort_quad(build_structured_quad(n), amplitude, seed)
    if family == "file":
        with open(str(n), encoding="utf-8") as f:
            return load_mesh(f)
    raise MeshError(f"unknown mesh family {family!r} (expected quad, tri, distorted, file)")


# ---------------------------------------------------------------------------
# Boundary tagging
# ---------------------------------------------------------------------------

def tag_boundary(mesh: PolyMesh, predicate: Callable[[np.ndarray], BoundaryTag]) -> PolyMesh:
    """Tag every boundary edge by evaluating predicate at its midpoint."""
    tags = {int(e): BoundaryTag(predicate(mesh.edge_midpoint(int(e)))) for e in mesh.boundary_edges}
    return mesh.with_tags(tags)


def all_dirichlet(_point: np.ndarray) -> BoundaryTag:
    return BoundaryTag.DIRICHLET


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def _data_lines(stream: TextIO) -> Iterable[Tuple[int, List[str]]]:
    for lineno, raw in enumerate(stream, 1):
        text = raw.split("#", 1)[0].strip()
        if text:
            yield lineno, text.split()


def load_mesh(stream: Union[TextIO, str]) -> PolyMesh:
    """Read `nv nc ne_b`, then nv `x y`, nc `m v0 .. v_{m-1}` and ne_b `va vb T` lines."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = iter(_data_lines(stream))

    def next_line(what: str) -> Tuple[int, List[str]]:
        try:
            return next(lines)
        except StopIteration:
            raise MeshFormatError(f"unexpected end of file while reading {what}") from None

    lineno, head = next_line("header")
    if len(head) != 3:
        raise MeshFormatError(f"header must be 'nv nc ne_b', got {' '.join(head)!r}", lineno)
    try:
        nv, nc, nb = (int(tok) for tok in head)
    except ValueError:
        raise MeshFormatError(f"non-integer header {' '.join(head)!r}", lineno) from None
    if nv < 3 or nc < 1 or nb < 0:
        raise MeshFormatError(f"invalid counts nv={nv} nc={nc} ne_b={nb}", lineno)

    vertices = np.empty((nv, 2))
    for i in range(nv):
        lineno, toks = next_line(f"vertex {i}")
        if len(toks) != 2:
            raise MeshFormatError(f"vertex line needs 2 coordinates, got {len(toks)}", lineno)
        try:
            vertices[i] = [float(toks[0]), float(toks[1])]
        except ValueError:
            raise MeshFormatError(f"bad coordinate in {' '.join(toks)!r}", lineno) from None

    cells = []
    for c in range(nc):
        lineno, toks = next_line(f"cell {c}")
        try:
            ids = [int(tok) for tok in toks]
        except ValueError:
            raise MeshFormatError(f"bad cell line {' '.join(toks)!r}", lineno) from None
        m = ids[0]
        if m < 3 or len(ids) != m + 1:
            raise MeshFormatError(f"cell declares {m} vertices but lists {len(ids) - 1}", lineno)
        cell = ids[1:]
        if min(cell) < 0 or max(cell) >= nv:
            raise MeshFormatError(f"cell references a vertex outside 0..{nv - 1}", lineno)
        if signed_area(vertices[cell]) < 0.0:
            log.warning("mesh line %d: cell %d is clockwise, reversing", lineno, c)
            cell = cell[::-1]
        cells.append(cell)

    raw_tags: List[Tuple[int, int, int, str]] = []
    for _ in range(nb):
        lineno, toks = next_line("boundary tag")
        if len(toks) != 3 or toks[2] not in ("D", "N"):
            raise MeshFormatError(f"tag line must be 'va vb D|N', got {' '.join(toks)!r}", lineno)
        try:
            raw_tags.append((lineno, int(toks[0]), int(toks[1]), toks[2]))
        except ValueError:
            raise MeshFormatError(f"bad vertex id in {' '.join(toks)!r}", lineno) from None
    extra = next(lines, None)
    if extra is not None:
        raise MeshFormatError("trailing data after the declared sections", extra[0])

    used = np.zeros(nv, dtype=bool)
    for cell in cells:
        used[cell] = True
    if not used.all():
        raise MeshError(f"dangling vertices: {np.nonzero(~used)[0][:10].tolist()}")

    mesh = PolyMesh(vertices, cells)
    tags: Dict[int, BoundaryTag] = {}
    for lineno, va, vb, t in raw_tags:
        try:
            e = mesh.edge_id(va, vb)
        except MeshError:
            raise MeshFormatError(f"tag for non-existent edge ({va}, {vb})", lineno) from None
        if e in tags:
            raise MeshFormatError(f"duplicate tag for edge ({va}, {vb})", lineno)
        if not mesh.is_boundary_edge(e):
            raise MeshFormatError(f"tag on interior edge ({va}, {vb})", lineno)
        tags[e] = BoundaryTag(t)
    return mesh.with_tags(tags) if tags else mesh


def write_mesh(mesh: PolyMesh) -> str:
    out = [f"# porovem mesh: {mesh.n_vertices} vertices, {mesh.n_cells} cells",
           f"{mesh.n_vertices} {mesh.n_cells} {len(mesh.tags)}"]
    out += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    out += [" ".join(str(i) for i in (len(cell), *cell)) for cell in mesh.cells]
    for e in sorted(mesh.tags):
        a, b = mesh.edges[e]
        out.append(f"{a} {b} {mesh.tags[e].value}")
    return "\n".join(out) + "\n"
