"""
Porovem — Shared utilities.

Helpers used across all modules: time stamps, file I/O, JSONL run events,
ordered parallel map and the experimental rate formula.
Does not import anything from porovem.* (zero dependency level).
"""

from __future__ import annotations

import datetime as _dt
import json
import logging
import math
import os
import pathlib
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Any, Callable, Dict, List, Optional, Sequence, TypeVar

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

_JSONL_LOCK = threading.Lock()


# ---------------------------------------------------------------------------
# Time
# ---------------------------------------------------------------------------

def utc_now_iso() -> str:
    return _dt.datetime.now(tz=_dt.timezone.utc).isoformat()


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def write_text(path: pathlib.Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")


def atomic_write_text(path: pathlib.Path, content: str) -> None:
    """Write through a temp file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile("w", encoding="utf-8", dir=path.parent, prefix=f".{path.name}.",
                                     suffix=".tmp", delete=False) as tmp:
        tmp.write(content)
        tmp.flush()
        os.fsync(tmp.fileno())
    os.replace(tmp.name, path)


def append_jsonl(path: Optional[pathlib.Path], obj: Dict[str, Any]) -> None:
    """Append one event as a JSON line. Best-effort: failures are logged, never raised."""
    if path is None:
        return
    record = {"ts": utc_now_iso(), **obj}
    try:
        line = json.dumps(record, ensure_ascii=False, default=_json_default)
    except (TypeError, ValueError):
        log.warning("append_jsonl: event is not serialisable: %r", obj.get("type"), exc_info=True)
        return
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with _JSONL_LOCK, path.open("a", encoding="utf-8") as f:
            f.write(line + "\n")
    except OSError:
        log.warning("append_jsonl: write failed for %s", path, exc_info=True)


def _json_default(value: Any) -> Any:
    # numpy scalars and arrays expose item()/tolist()
    if hasattr(value, "tolist"):
        return value.tolist()
    if hasattr(value, "item"):
        return value.item()
    raise TypeError(f"not JSON serialisable: {type(value).__name__}")


# ---------------------------------------------------------------------------
# Parallel map
# ---------------------------------------------------------------------------

def ordered_map(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    """Apply fn to every item; results come back in input order whatever the completion order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    executor = ThreadPoolExecutor(max_workers=min(workers, len(items)), thread_name_prefix="porovem")
    try:
        future_to_index = {executor.submit(fn, item): idx for idx, item in enumerate(items)}
        results: List[Any] = [None] * len(items)
        for future in as_completed(future_to_index):
            results[future_to_index[future]] = future.result()
    finally:
        executor.shutdown(wait=False, cancel_futures=True)
    return results


# ---------------------------------------------------------------------------
# Numbers
# ---------------------------------------------------------------------------

def convergence_rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    """r = log(e_fine/e_coarse) / log(h_fine/h_coarse); NaN when undefined."""
    if min(e_coarse, e_fine, h_coarse, h_fine) <= 0.0 or h_coarse == h_fine:
        return float("nan")
    return math.log(e_fine / e_coarse) / math.log(h_fine / h_coarse)

