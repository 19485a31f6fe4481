"""
Porovem — Run configuration.

A JSON file (or a flat `key = value` text file) plus dotted `key=value` overrides from
the command line, folded into one frozen RunConfig. Defaults reproduce the Example-1
study: unit parameters, eta1 = 1e-3, k = 1, quad meshes n = 8, 16, 32, 64.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Tuple, Union

from porovem.assembly import ESSENTIAL_MODES
from porovem.hr_space import DEFAULT_S1_TRACE, S1_TRACES
from porovem.model import MaterialParams, ParameterError
from porovem.solver import NORM_TYPES, FixedPointConfig
from porovem.verification import CASES

log = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path("porovem.config.json")
MODES = ("convergence", "single", "saddle-check", "mesh-info")
FAMILIES = ("quad", "tri", "distorted", "file")
DEGREES = (1, 2)
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

ALIASES = {
    "k": "degree",
    "levels": "mesh.levels",
    "family": "mesh.family",
    "tol": "picard.tol",
    "trials": "saddle.trials",
    "distortion": "mesh.distortion",
}

PARAM_KEYS = {
    "mu": "mu", "lambda": "lam", "alpha": "alpha", "beta": "beta", "s0": "s0",
    "rho0": "rho0", "eta0": "eta0", "eta1": "eta1",
}

KNOWN_KEYS = {
    "mode", "degree", "case", "workers", "seed", "log_level",
    "mesh.family", "mesh.levels", "mesh.distortion",
    "picard.tol", "picard.max_iter", "picard.norm", "picard.relative",
    "output.dir", "output.csv_path", "output.fields_path", "output.events_path", "output.report_path",
    "saddle.trials", "saddle.max_dim", "saddle.directions",
    "boundary.essential", "stabilization.s1_trace",
    "params.kappa11", "params.kappa12", "params.kappa22",
    *(f"params.{k}" for k in PARAM_KEYS),
}


class ConfigError(ValueError):
    """Invalid configuration value; carries the key and, for text sources, the line."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f"line {line}: " if line else ""
        what = f"{key}: " if key else ""
        super().__init__(f"{where}{what}{message}")


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeshConfig:
    family: str = "quad"
    levels: Tuple[Union[int, str], ...] = (8, 16, 32, 64)
    distortion: Optional[float] = None


@dataclass(frozen=True)
class OutputConfig:
    dir: str = "output"
    csv_path: str = ""
    fields_path: str = ""
    events_path: str = ""
    report_path: str = ""

    def path(self, name: str) -> Path:
        defaults = {"csv_path": "convergence.csv", "fields_path": "fields",
                    "events_path": "events.jsonl", "report_path": "report.json"}
        value = getattr(self, name)
        return Path(value) if value else Path(self.dir) / defaults[name]


@dataclass(frozen=True)
class SaddleConfig:
    trials: int = 100
    max_dim: int = 40
    directions: int = 1000


@dataclass(frozen=True)
class RunConfig:
    mode: str = "convergence"
    mesh: MeshConfig = field(default_factory=MeshConfig)
    degree: int = 1
    params: MaterialParams = field(default_factory=MaterialParams)
    picard: FixedPointConfig = field(default_factory=FixedPointConfig)
    case: str = "example1"
    output: OutputConfig = field(default_factory=OutputConfig)
    saddle: SaddleConfig = field(default_factory=SaddleConfig)
    workers: int = 1
    seed: int = 0
    essential: str = "exact"
    s1_trace: str = DEFAULT_S1_TRACE
    log_level: str = "INFO"

    def as_dict(self) -> Dict[str, Any]:
        return {
            "mode": self.mode, "degree": self.degree, "case": self.case,
            "mesh": {"family": self.mesh.family, "levels": list(self.mesh.levels), "distortion": self.mesh.distortion},
            "params": self.params.as_dict(),
            "picard": {"tol": self.picard.tol, "max_iter": self.picard.max_iter, "norm": self.picard.norm,
                       "relative": self.picard.relative},
            "output": {"dir": self.output.dir, "csv_path": str(self.output.path("csv_path")),
                       "fields_path": str(self.output.path("fields_path")),
                       "events_path": str(self.output.path("events_path"))},
            "saddle": {"trials": self.saddle.trials, "max_dim": self.saddle.max_dim,
                       "directions": self.saddle.directions},
            "workers": self.workers, "seed": self.seed, "boundary.essential": self.essential,
            "stabilization.s1_trace": self.s1_trace, "log_level": self.log_level,
        }


# ---------------------------------------------------------------------------
# Sources
# ---------------------------------------------------------------------------

Entry = Tuple[Any, Optional[int]]  # raw value, 1-based line (None for JSON)


def _canonical(key: str, line: Optional[int]) -> str:
    key = ALIASES.get(key.strip(), key.strip())
    if key not in KNOWN_KEYS:
        raise ConfigError("unknown key", key, line)
    return key


def parse_key_values(text: str, first_line: int = 1) -> Dict[str, Entry]:
    """Flat `key = value` lines; `#` starts a comment."""
    out: Dict[str, Entry] = {}
    for lineno, raw in enumerate(text.splitlines(), first_line):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", line=lineno)
        key, value = line.split("=", 1)
        if not key.strip():
            raise ConfigError("empty key", line=lineno)
        out[_canonical(key, lineno)] = (value.strip(), lineno)
    return out


def _flatten(data: Dict[str, Any], prefix: str = "") -> Dict[str, Entry]:
    out: Dict[str, Entry] = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, f"{name}."))
        else:
            out[_canonical(name, None)] = (value, None)
    return out


def read_config_file(path: Path) -> Dict[str, Entry]:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc.msg}", line=exc.lineno) from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top-level JSON value must be an object")
        return _flatten(data)
    return parse_key_values(text)


# ---------------------------------------------------------------------------
# Coercion
# ---------------------------------------------------------------------------

def _get(data: Dict[str, Entry], key: str, default: Any) -> Tuple[Any, Optional[int]]:
    return data.get(key, (default, None))


def _int(data: Dict[str, Entry], key: str, default: int, minimum: int = 0) -> int:
    raw, line = _get(data, key, default)
    try:
        val = int(str(raw).strip())
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", key, line) from None
    return max(minimum, val)


def _float(data: Dict[str, Entry], key: str, default: Optional[float]) -> Optional[float]:
    raw, line = _get(data, key, default)
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none", "null")):
        return None
    try:
        return float(str(raw).strip())
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}", key, line) from None


def _bool(data: Dict[str, Entry], key: str, default: bool) -> bool:
    raw, line = _get(data, key, default)
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}", key, line)


def _choice(data: Dict[str, Entry], key: str, default: str, choices: Iterable[str]) -> str:
    raw, line = _get(data, key, default)
    val = str(raw).strip()
    choices = tuple(choices)
    if val not in choices:
        raise ConfigError(f"expected one of {', '.join(choices)}, got {val!r}", key, line)
    return val


def _levels(data: Dict[str, Entry], family: str) -> Tuple[Union[int, str], ...]:
    raw, line = _get(data, "mesh.levels", MeshConfig.levels)
    items = list(raw) if isinstance(raw, (list, tuple)) else [t for t in str(raw).replace(";", ",").split(",")]
    items = [str(t).strip() for t in items if str(t).strip()]
    if not items:
        raise ConfigError("no mesh levels given", "mesh.levels", line)
    if family == "file":
        missing = [p for p in items if not Path(p).expanduser().exists()]
        if missing:
            raise ConfigError(f"mesh file not found: {missing[0]}", "mesh.levels", line)
        return tuple(str(Path(p).expanduser()) for p in items)
    try:
        levels = tuple(int(t) for t in items)
    except ValueError:
        raise ConfigError(f"expected integers, got {raw!r}", "mesh.levels", line) from None
    if min(levels) < 1:
        raise ConfigError("mesh sizes must be >= 1", "mesh.levels", line)
    return levels


def _params(data: Dict[str, Entry]) -> MaterialParams:
    defaults = MaterialParams()
    values = {attr: _float(data, f"params.{key}", getattr(defaults, attr)) for key, attr in PARAM_KEYS.items()}
    (k11, k12), (_, k22) = defaults.kappa
    kappa = ((_float(data, "params.kappa11", k11), _float(data, "params.kappa12", k12)),
             (_float(data, "params.kappa12", k12), _float(data, "params.kappa22", k22)))
    try:
        return MaterialParams(kappa=kappa, **values)
    except ParameterError as exc:
        raise ConfigError(str(exc), "params") from exc


# ---------------------------------------------------------------------------
# Loader
# ---------------------------------------------------------------------------

def build_run_config(data: Dict[str, Entry]) -> RunConfig:
    family = _choice(data, "mesh.family", "quad", FAMILIES)
    degree = _int(data, "degree", 1)
    if degree not in DEGREES:
        raise ConfigError(f"degree must be one of {DEGREES}, got {degree}", "degree", _get(data, "degree", 1)[1])
    try:
        picard = FixedPointConfig(
            tol=_float(data, "picard.tol", 5e-6),
            max_iter=_int(data, "picard.max_iter", 50),
            norm=_choice(data, "picard.norm", "all", NORM_TYPES),
            relative=_bool(data, "picard.relative", False),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "picard") from exc
    return RunConfig(
        mode=_choice(data, "mode", "convergence", MODES),
        mesh=MeshConfig(family, _levels(data, family), _float(data, "mesh.distortion", None)),
        degree=degree,
        params=_params(data),
        picard=picard,
        case=_choice(data, "case", "example1", sorted(CASES)),
        output=OutputConfig(
            dir=str(_get(data, "output.dir", "output")[0]),
            csv_path=str(_get(data, "output.csv_path", "")[0]),
            fields_path=str(_get(data, "output.fields_path", "")[0]),
            events_path=str(_get(data, "output.events_path", "")[0]),
            report_path=str(_get(data, "output.report_path", "")[0]),
        ),
        saddle=SaddleConfig(
            trials=_int(data, "saddle.trials", 100, minimum=1),
            max_dim=_int(data, "saddle.max_dim", 40, minimum=1),
            directions=_int(data, "saddle.directions", 1000, minimum=2),
        ),
        workers=_int(data, "workers", 1, minimum=1),
        seed=_int(data, "seed", 0),
        essential=_choice(data, "boundary.essential", "exact", ESSENTIAL_MODES),
        s1_trace=_choice(data, "stabilization.s1_trace", DEFAULT_S1_TRACE, S1_TRACES),
        log_level=_choice(data, "log_level", "INFO", LOG_LEVELS),
    )


def load_run_config(path: Optional[str] = None, overrides: Iterable[str] = ()) -> RunConfig:
    """File (explicit path, $POROVEM_CONFIG, or ./porovem.config.json when present) plus overrides."""
    explicit = path or os.environ.get("POROVEM_CONFIG")
    cfg_path = Path(explicit or DEFAULT_CONFIG_PATH).expanduser().resolve()
    data: Dict[str, Entry] = {}
    if cfg_path.exists():
        data.update(read_config_file(cfg_path))
        log.debug("config loaded from %s (%d keys)", cfg_path, len(data))
    elif explicit:
        raise ConfigError(f"config file not found: {cfg_path}")

    extra: List[str] = list(overrides)
    for i, item in enumerate(extra, 1):
        if "=" not in item:
            raise ConfigError(f"override #{i} must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        data[_canonical(key, None)] = (value.strip(), None)
    return build_run_config(data)
