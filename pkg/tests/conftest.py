"""Shared cells and local-space builders."""
import math

import numpy as np
import pytest

from porovem.hdiv_space import HdivLocalSpace
from porovem.hr_space import HRLocalSpace
from porovem.mesh import polygon_geometry
from porovem.model import MaterialParams
from porovem.polybasis import BasisWorkspace

CELLS = {
    "square": [[0, 0], [1, 0], [1, 1], [0, 1]],
    "triangle": [[0, 0], [1, 0], [0.2, 0.9]],
    "pentagon": [[0, 0], [2, 0], [2.4, 1.1], [1.0, 1.9], [-0.3, 1.0]],
    "hexagon": [[math.cos(k * math.pi / 3), math.sin(k * math.pi / 3)] for k in range(6)],
}


def make_workspace(vertices, k, signs=None):
    geo = polygon_geometry(np.asarray(vertices, dtype=float))
    return BasisWorkspace(geo, k, signs if signs is not None else [1] * len(geo.vertices))


def project_scalar(ws, fn):
    """L2 projection onto M_k by the cell rule: coefficients of fn, (N,) -> (n_k,)."""
    scalar = ws.values[:, :ws.n_k]
    return np.linalg.solve(ws.mass, np.einsum("q,q,qi->i", ws.rule.weights, fn(ws.rule.points), scalar))


def project_vector(ws, fn):
    """Component-major vector M_k coefficients of fn, (N, 2) -> (2 n_k,)."""
    vals = fn(ws.rule.points)
    return np.concatenate([project_scalar(ws, lambda _p, c=c: vals[:, c]) for c in (0, 1)])


@pytest.fixture(params=sorted(CELLS))
def cell_name(request):
    return request.param


@pytest.fixture
def params():
    return MaterialParams()


@pytest.fixture
def hr_factory(params):
    def build(name, k, s1_trace="compliance", p=None):
        return HRLocalSpace(make_workspace(CELLS[name], k), p or params, s1_trace)
    return build


@pytest.fixture
def hdiv_factory():
    def build(name, k):
        return HdivLocalSpace(make_workspace(CELLS[name], k))
    return build
