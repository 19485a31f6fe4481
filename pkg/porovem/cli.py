"""
Porovem — Command-line driver.

Loads the RunConfig, configures logging once, dispatches the selected mode through the
ModeRegistry and maps the package exceptions to exit codes:
0 ok, 1 acceptance failure, 2 config error, 3 mesh error, 4 solver error.
"""

from __future__ import annotations

import argparse
import logging
import pathlib
import sys
import time
from typing import Callable, List, Optional, Sequence

from porovem import __version__
from porovem.abstract_saddle import HypothesisError
from porovem.config import ConfigError, RunConfig, load_run_config
from porovem.mesh import MeshError
from porovem.model import ParameterError
from porovem.modes.registry import (
    EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_MESH, EXIT_OK, EXIT_SOLVER, ModeRegistry, RunContext,
)
from porovem.solver import SolverError
from porovem.utils import append_jsonl, utc_now_iso

log = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)


def run(config: RunConfig, emit: Callable[[str], None] = print,
        registry: Optional[ModeRegistry] = None) -> int:
    """Execute one configured run; returns the exit status."""
    events_path = config.output.path("events_path")
    ctx = RunContext(config=config, out_dir=pathlib.Path(config.output.dir), events_path=events_path, emit=emit)
    registry = registry or ModeRegistry()
    t0 = time.perf_counter()
    try:
        status = registry.execute(config.mode, ctx)
    except (ConfigError, ParameterError) as exc:
        log.error("configuration error: %s", exc)
        status = EXIT_CONFIG
    except MeshError as exc:
        log.error("mesh error: %s", exc)
        status = EXIT_MESH
    except SolverError as exc:
        log.error("solver error: %s", exc)
        status = EXIT_SOLVER
    except HypothesisError as exc:
        log.error("hypothesis violated: %s", exc)
        status = EXIT_ACCEPTANCE
    except OSError as exc:
        log.error("I/O error: %s", exc)
        status = EXIT_CONFIG
    append_jsonl(events_path, {
        "ts": utc_now_iso(), "type": "run_finished", "mode": config.mode, "status": status,
        "wall_time": round(time.perf_counter() - t0, 3), "artifacts": [str(p) for p in ctx.artifacts],
    })
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="porovem",
        description="Polytopal VEM solver for Biot poroelasticity with stress-assisted diffusion.",
    )
    parser.add_argument("--config", default=None,
                        help="JSON or key = value config file (default: $POROVEM_CONFIG or ./porovem.config.json)")
    parser.add_argument("--list-modes", action="store_true", help="print the available modes and exit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("overrides", nargs="*", metavar="key=value",
                        help="dotted overrides, e.g. mode=saddle-check trials=100 params.lambda=1e6")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.list_modes:
        for name, description in ModeRegistry().describe().items():
            print(f"{name:14s} {description}")
        return EXIT_OK
    overrides: List[str] = list(args.overrides)
    try:
        config = load_run_config(args.config, overrides)
    except ConfigError as exc:
        configure_logging()
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    configure_logging(config.log_level)
    log.info("porovem %s: mode=%s k=%d family=%s levels=%s", __version__, config.mode, config.degree,
             config.mesh.family, ",".join(map(str, config.mesh.levels)))
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
