"""
Porovem — polytopal virtual elements for Biot poroelasticity with stress-assisted diffusion.

Modules: mesh, polybasis, model, hr_space, hdiv_space, assembly, solver,
verification, abstract_saddle, export, config, cli, modes/.
"""

from __future__ import annotations

import pathlib

__all__ = ["__version__"]


def _read_version() -> str:
    try:
        return (pathlib.Path(__file__).resolve().parent.parent / "VERSION").read_text(encoding="utf-8").strip()
    except OSError:
        return "0.0.0"


__version__ = _read_version()
