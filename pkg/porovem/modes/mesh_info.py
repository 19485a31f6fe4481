"""Mesh summaries per level, and the continuous boundedness constants."""

from __future__ import annotations

from typing import List

from porovem.mesh import build_family, shape_regularity, validate
from porovem.model import bound_constants
from porovem.modes.registry import EXIT_OK, ModeEntry, RunContext


def _mesh_info(ctx: RunContext) -> int:
    cfg = ctx.config
    for n in cfg.mesh.levels:
        mesh = build_family(cfg.mesh.family, n, seed=cfg.seed, distortion=cfg.mesh.distortion)
        validate(mesh)
        ctx.emit(f"level {n}: nv={mesh.n_vertices} nc={mesh.n_cells} ne={mesh.n_edges} "
                 f"h={mesh.h:.6f} eta={shape_regularity(mesh):.4f} area={mesh.total_area():.6f}")
    consts = bound_constants(cfg.params)
    ctx.emit("bounds: " + " ".join(f"{name}={value:.4g}" for name, value in consts.items()))
    return EXIT_OK


def get_modes() -> List[ModeEntry]:
    return [ModeEntry("mesh-info", "Vertex/cell/edge counts, h and shape regularity per level", _mesh_info)]
