"""Single solve: one mesh level, JSON error/solve report and the per-cell field export."""

from __future__ import annotations

import json
import logging
from typing import List

from porovem.assembly import conservation_residuals
from porovem.export import export_fields
from porovem.mesh import build_family
from porovem.modes.registry import EXIT_ACCEPTANCE, EXIT_OK, ModeEntry, RunContext
from porovem.utils import atomic_write_text
from porovem.verification import make_case, solve_level

log = logging.getLogger(__name__)


def _single(ctx: RunContext) -> int:
    cfg = ctx.config
    case = make_case(cfg.case, cfg.params)
    n = cfg.mesh.levels[0]
    mesh = build_family(cfg.mesh.family, n, seed=cfg.seed, distortion=cfg.mesh.distortion)
    mesh, dmap, spaces, state, report, errors = solve_level(
        mesh, cfg.degree, case, cfg.picard, cfg.essential, cfg.workers, cfg.s1_trace, ctx.events_path)

    balances = conservation_residuals(mesh, dmap, spaces, case.params, state.as_dict(), case, report.phi_hat)
    payload = {
        "n": n,
        "cells": mesh.n_cells,
        "dofs": dmap.counts(),
        "errors": errors.as_dict(),
        "solve": report.as_dict(),
        "conservation": {name: float(values.max(initial=0.0)) for name, values in balances.items()},
        "config": cfg.as_dict(),
    }
    report_path = ctx.output("report_path")
    atomic_write_text(report_path, json.dumps(payload, indent=2, ensure_ascii=False) + "\n")
    fields_base = ctx.output("fields_path")
    export_fields(mesh, dmap, spaces, state, fields_base)
    ctx.artifacts += [report_path, fields_base.with_suffix(".csv"), fields_base.with_suffix(".vtk")]

    ctx.emit(f"n={n} cells={mesh.n_cells} h={errors.h:.4e} iterations={report.iterations} "
             f"converged={report.converged}")
    ctx.emit("  ".join(f"e_{name}={errors.component(name):.4e}" for name in ("total", "sigma", "u", "z", "p",
                                                                               "zeta", "phi")))
    ctx.emit("artifacts: " + ", ".join(str(p) for p in ctx.artifacts))
    if not report.converged:
        log.error("picard did not converge (last increment %.3e)", report.final_increment)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def get_modes() -> List[ModeEntry]:
    return [ModeEntry("single", "One solve on the first mesh level with report and field export", _single)]
