"""
Porovem — Run-mode registry.

Plugin architecture: each module in porovem/modes/ exports get_modes().
ModeRegistry collects them and dispatches a RunContext to the selected handler.
"""

from __future__ import annotations

import logging
import pathlib
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from porovem.config import RunConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_CONFIG = 2
EXIT_MESH = 3
EXIT_SOLVER = 4


@dataclass
class RunContext:
    """What a mode handler gets: the config, where to write, and where to print."""

    config: RunConfig
    out_dir: pathlib.Path
    events_path: Optional[pathlib.Path] = None
    emit: Callable[[str], None] = field(default=print)
    artifacts: List[pathlib.Path] = field(default_factory=list)

    def output(self, name: str) -> pathlib.Path:
        return self.config.output.path(name)


@dataclass
class ModeEntry:
    """Single run mode: name, one-line description, handler returning an exit status."""

    name: str
    description: str
    handler: Callable[[RunContext], int]


class ModeRegistry:
    """To add a mode: create a module in porovem/modes/ exporting get_modes() -> List[ModeEntry]."""

    def __init__(self) -> None:
        self._entries: Dict[str, ModeEntry] = {}
        self._load_modules()

    def _load_modules(self) -> None:
        import importlib
        import pkgutil

        import porovem.modes as modes_pkg
        for _importer, modname, _ispkg in pkgutil.iter_modules(modes_pkg.__path__):
            if modname.startswith("_") or modname == "registry":
                continue
            try:
                mod = importlib.import_module(f"porovem.modes.{modname}")
            except ImportError:
                log.warning("Failed to load mode module %s", modname, exc_info=True)
                continue
            if hasattr(mod, "get_modes"):
                for entry in mod.get_modes():
                    self._entries[entry.name] = entry

    def register(self, entry: ModeEntry) -> None:
        self._entries[entry.name] = entry

    def available_modes(self) -> List[str]:
        return sorted(self._entries)

    def describe(self) -> Dict[str, str]:
        return {name: self._entries[name].description for name in self.available_modes()}

    def execute(self, name: str, ctx: RunContext) -> int:
        entry = self._entries.get(name)
        if entry is None:
            log.error("Unknown mode: %s. Available: %s", name, ", ".join(self.available_modes()))
            return EXIT_CONFIG
        return entry.handler(ctx)
