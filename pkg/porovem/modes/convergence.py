"""Convergence study: solve every mesh level, print the rate table, write the CSV."""

from __future__ import annotations

import logging
from typing import List

from porovem.modes.registry import EXIT_ACCEPTANCE, EXIT_OK, ModeEntry, RunContext
from porovem.utils import atomic_write_text
from porovem.verification import make_case, run_study

log = logging.getLogger(__name__)


def _convergence(ctx: RunContext) -> int:
    cfg = ctx.config
    case = make_case(cfg.case, cfg.params)
    table = run_study(
        cfg.mesh.family, cfg.mesh.levels, cfg.degree, cfg.params, case=case, config=cfg.picard,
        essential=cfg.essential, workers=cfg.workers, seed=cfg.seed, distortion=cfg.mesh.distortion,
        s1_trace=cfg.s1_trace, events_path=ctx.events_path,
    )
    csv_path = ctx.output("csv_path")
    atomic_write_text(csv_path, table.to_csv())
    ctx.artifacts.append(csv_path)
    ctx.emit(table.format())
    final = table.final_rate("total")
    ctx.emit(f"final rate r(e_total) = {'-' if final is None else f'{final:.2f}'}; csv: {csv_path}")
    failures: List[str] = table.acceptance_failures(cfg.degree)
    if failures:
        for failure in failures:
            log.error("acceptance: %s", failure)
        ctx.emit(f"acceptance failed ({len(failures)} check(s))")
        return EXIT_ACCEPTANCE
    return EXIT_OK


def get_modes() -> List[ModeEntry]:
    return [ModeEntry("convergence", "Manufactured-solution convergence study over mesh levels", _convergence)]
