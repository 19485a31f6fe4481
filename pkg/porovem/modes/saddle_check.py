"""Randomised check of the perturbed saddle-point a priori bounds, plus the negative probe."""

from __future__ import annotations

import logging
from typing import List

from porovem.abstract_saddle import hypothesis_probe, run_trials
from porovem.modes.registry import EXIT_ACCEPTANCE, EXIT_OK, ModeEntry, RunContext

log = logging.getLogger(__name__)

PROBE_DIMS = (4, 6)


def _saddle_check(ctx: RunContext) -> int:
    cfg = ctx.config
    reports = run_trials(cfg.saddle.trials, cfg.saddle.max_dim, cfg.seed, cfg.workers,
                         cfg.saddle.directions, ctx.events_path)
    total = len(reports)
    bounds = sum(1 for r in reports if r.bounds_ok == r.bounds_checked)
    passed = sum(1 for r in reports if r.passed)
    ctx.emit(f"{bounds}/{total} bounds hold")
    ctx.emit(f"{passed}/{total} instances pass all checks "
             f"(max residual {max((r.residual for r in reports), default=0.0):.1e})")

    probe = hypothesis_probe(*PROBE_DIMS, seed=cfg.seed)
    rejected = bool(probe.hypothesis_error) and probe.singular
    ctx.emit(f"probe (lambda_min(c) = 0): {'rejected' if probe.hypothesis_error else 'ACCEPTED'}, "
             f"singular={probe.singular} (sigma_min {probe.min_singular_value:.1e})")
    if passed != total or not rejected:
        log.error("saddle check failed: %d/%d instances passed, probe rejected=%s", passed, total, rejected)
        return EXIT_ACCEPTANCE
    return EXIT_OK


def get_modes() -> List[ModeEntry]:
    return [ModeEntry("saddle-check", "Random perturbed saddle-point instances against the a priori bounds",
                      _saddle_check)]
