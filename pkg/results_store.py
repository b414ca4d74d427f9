"""
Append-only results sink for experiment grids.

Results are stored as JSON lines. Each record is written with a single
``write`` followed by flush + fsync while holding a lock, so a crash leaves
at most one incomplete trailing line, which :func:`load_results` skips.

Usage:
    from results_store import ResultsSink, load_results

    sink = ResultsSink(out_dir / "results.jsonl")
    if not sink.is_complete(key):
        sink.append(record)
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path
from typing import Any, Iterator, Union

from utils.errors import FormatError
from utils.logging import get_logger

logger = get_logger()

# ============================================================================
# CONFIGURATION
# ============================================================================

RESULTS_FILE_NAME = "results.jsonl"
KEY_FIELD = "cell_key"
STATUS_FIELD = "status"
STATUS_OK = "ok"
STATUS_ERROR = "error"


# ============================================================================
# READING
# ============================================================================

def _iter_lines(path: Path) -> Iterator[tuple[int, str, bool]]:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.readlines()
    for number, line in enumerate(lines, start=1):
        yield number, line, number == len(lines)


def load_results(path: Union[str, Path], *, strict: bool = False) -> list[dict[str, Any]]:
    """
    Read every complete record of a results file.

    An unterminated trailing line (interrupted write) is skipped unless
    ``strict`` is set.

    Raises:
        FormatError: If the file is missing or a complete line is not a JSON object.
    """
    path = Path(path)
    if not path.exists():
        raise FormatError(f"Results file not found: {path}")
    records: list[dict[str, Any]] = []
    for number, line, last in _iter_lines(path):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            if last and not line.endswith("\n") and not strict:
                logger.warning("Skipping incomplete trailing record in %s", path)
                continue
            raise FormatError(f"{path}:{number}: malformed results record: {e}") from e
        if not isinstance(record, dict):
            raise FormatError(f"{path}:{number}: results record is not an object")
        records.append(record)
    return records


# ============================================================================
# SINK
# ============================================================================

class ResultsSink:
    """Serialized appender; safe to share between threads of one process."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._completed: set[str] = set()
        if self.path.exists():
            self._repair_tail()
            self._completed = {
                r[KEY_FIELD] for r in load_results(self.path)
                if r.get(STATUS_FIELD) == STATUS_OK and KEY_FIELD in r
            }
            logger.info("Resuming: %d completed cells in %s", len(self._completed), self.path)
        else:
            self.path.touch()

    def _repair_tail(self) -> None:
        """Drop an unterminated trailing line left by an interrupted run."""
        payload = self.path.read_bytes()
        if payload and not payload.endswith(b"\n"):
            cut = payload.rfind(b"\n") + 1
            with open(self.path, "r+b") as f:
                f.truncate(cut)
            logger.warning("Removed incomplete trailing record from %s", self.path)

    def is_complete(self, key: str) -> bool:
        return key in self._completed

    @property
    def completed(self) -> frozenset[str]:
        return frozenset(self._completed)

    def append(self, record: dict[str, Any]) -> None:
        line = json.dumps(record, sort_keys=True, default=str) + "\n"
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
            if record.get(STATUS_FIELD) == STATUS_OK and KEY_FIELD in record:
                self._completed.add(record[KEY_FIELD])

    def records(self) -> list[dict[str, Any]]:
        with self._lock:
            return load_results(self.path) if self.path.exists() else []
