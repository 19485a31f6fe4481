"""Smoke checks for Porovem: imports, mode registry, VERSION, code size and hygiene.

    python -m pytest tests/test_smoke.py -v
"""
import ast
import pathlib

import pytest

REPO = pathlib.Path(__file__).resolve().parent.parent
PACKAGE = REPO / "porovem"

# ── Module imports ───────────────────────────────────────────────

CORE_MODULES = [
    "porovem",
    "porovem.utils",
    "porovem.mesh",
    "porovem.polybasis",
    "porovem.model",
    "porovem.hr_space",
    "porovem.hdiv_space",
    "porovem.assembly",
    "porovem.solver",
    "porovem.verification",
    "porovem.abstract_saddle",
    "porovem.export",
    "porovem.config",
    "porovem.cli",
]

MODE_MODULES = [
    "porovem.modes.registry",
    "porovem.modes.convergence",
    "porovem.modes.single",
    "porovem.modes.saddle_check",
    "porovem.modes.mesh_info",
]


@pytest.mark.parametrize("module", CORE_MODULES + MODE_MODULES)
def test_import(module):
    """Every module imports without error."""
    __import__(module)


# ── Mode registry ────────────────────────────────────────────────

EXPECTED_MODES = ["convergence", "mesh-info", "saddle-check", "single"]


@pytest.fixture
def registry():
    from porovem.modes.registry import ModeRegistry
    return ModeRegistry()


def test_mode_set_matches(registry):
    """Registry contains exactly the expected modes (no more, no less)."""
    assert registry.available_modes() == EXPECTED_MODES


def test_modes_match_config_choices(registry):
    from porovem.config import MODES
    assert set(MODES) == set(registry.available_modes())


def test_modes_have_descriptions(registry):
    for name, description in registry.describe().items():
        assert description.strip(), f"{name} has no description"


def test_unknown_mode_returns_config_exit(registry, tmp_path):
    from porovem.config import RunConfig
    from porovem.modes.registry import EXIT_CONFIG, RunContext
    ctx = RunContext(config=RunConfig(), out_dir=tmp_path, emit=lambda _s: None)
    assert registry.execute("__nonexistent__", ctx) == EXIT_CONFIG


def test_registered_mode_is_dispatched(registry, tmp_path):
    from porovem.config import RunConfig
    from porovem.modes.registry import ModeEntry, RunContext
    seen = []
    registry.register(ModeEntry("echo", "test", lambda ctx: seen.append(ctx.config.mode) or 7))
    ctx = RunContext(config=RunConfig(), out_dir=tmp_path, emit=lambda _s: None)
    assert registry.execute("echo", ctx) == 7
    assert seen == ["convergence"]


# ── Version ──────────────────────────────────────────────────────

def _version() -> str:
    return (REPO / "VERSION").read_text(encoding="utf-8").strip()


def test_version_is_semver():
    major, minor, patch = _version().split(".")
    assert all(part.isdigit() for part in (major, minor, patch)), _version()


def test_readme_names_version():
    assert _version() in (REPO / "README.md").read_text(encoding="utf-8")


def test_package_version_matches_file():
    import porovem
    assert porovem.__version__ == _version()


# ── Code size and hygiene ────────────────────────────────────────

MAX_MODULE_LINES = 1000
MAX_FUNCTION_LINES = 200


def _sources():
    for path in sorted(PACKAGE.rglob("*.py")):
        if "__pycache__" not in path.parts:
            yield path
    yield REPO / "launcher.py"


def test_module_sizes():
    big = {p.name: n for p in _sources() if (n := len(p.read_text(encoding="utf-8").splitlines())) > MAX_MODULE_LINES}
    assert not big, big


def test_function_sizes():
    big = []
    for path in _sources():
        for node in ast.walk(ast.parse(path.read_text(encoding="utf-8"))):
            if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                size = node.end_lineno - node.lineno + 1
                if size > MAX_FUNCTION_LINES:
                    big.append(f"{path.name}:{node.name} ({size})")
    assert not big, big


def test_no_silent_bare_except():
    offenders = []
    for path in _sources():
        for node in ast.walk(ast.parse(path.read_text(encoding="utf-8"))):
            if isinstance(node, ast.ExceptHandler) and node.type is None \
                    and all(isinstance(stmt, ast.Pass) for stmt in node.body):
                offenders.append(f"{path.name}:{node.lineno}")
    assert not offenders, offenders


def test_library_modules_do_not_configure_logging():
    """Only the CLI calls logging.basicConfig."""
    offenders = [p.name for p in _sources()
                 if "basicConfig" in p.read_text(encoding="utf-8") and p.name != "cli.py"]
    assert offenders == []
