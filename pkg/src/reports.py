"""Report and export writers for verification runs.

Files are written atomically (temporary file in the target directory, then
``os.replace``) so an interrupted run never leaves a half-written report.
CSV exports start with a schema comment line.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
import platform
import tempfile
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CSV_SCHEMA_LINE = "# gfx-lab v1"
REPORT_SCHEMA = "gfx-lab/report/v1"


def _ensure_directory(path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)


def _atomic_write_text(path: str | Path, text: str) -> Path:
    target = Path(path)
    _ensure_directory(target)
    fd, temp_path = tempfile.mkstemp(dir=target.parent, prefix=f"{target.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as tmp:
            tmp.write(text)
            tmp.flush()
            os.fsync(tmp.fileno())
        os.replace(temp_path, target)
    finally:
        if os.path.exists(temp_path):
            os.remove(temp_path)
    logger.debug("Wrote %s (%d bytes)", target, len(text))
    return target


def to_jsonable(value: Any) -> Any:
    """Converts numpy scalars/arrays, tuples and non-finite floats for JSON."""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return to_jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else ("-inf" if value < 0 else "nan")
    if hasattr(value, "to_dict"):
        return to_jsonable(value.to_dict())
    return value


def content_hash(payload: bytes | str) -> str:
    """Git-style blob hash: ``sha1(b"blob <len>\\0" + content)``."""
    data = payload.encode("utf-8") if isinstance(payload, str) else payload
    digest = hashlib.sha1(f"blob {len(data)}\0".encode("ascii"))
    digest.update(data)
    return digest.hexdigest()


def inputs_hash(config: Mapping[str, Any]) -> str:
    """Content hash of a configuration in canonical JSON form."""
    return content_hash(json.dumps(to_jsonable(config), sort_keys=True, separators=(",", ":")))


def host_snapshot() -> dict[str, Any]:
    """Interpreter and host facts for provenance; psutil figures when installed."""
    snapshot: dict[str, Any] = {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "numpy": np.__version__,
    }
    try:
        import psutil
    except ImportError:
        logger.debug("psutil not available, skipping host resource snapshot")
        return snapshot
    try:
        memory = psutil.virtual_memory()
        snapshot["cpu_count"] = psutil.cpu_count(logical=True)
        snapshot["memory_total"] = int(memory.total)
        snapshot["memory_available"] = int(memory.available)
    except Exception as exc:  # psutil raises platform-specific errors
        logger.warning("Unable to read host resources: %s", exc)
    return snapshot


def build_report(
    command: str,
    config: Mapping[str, Any],
    checks: Sequence[Any],
    passed: bool,
    error: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Assembles the JSON report document for one verification run."""
    report = {
        "schema": REPORT_SCHEMA,
        "command": command,
        "created": datetime.now(timezone.utc).isoformat(),
        "passed": bool(passed),
        "config": to_jsonable(config),
        "inputs_hash": inputs_hash(config),
        "host": host_snapshot(),
        "checks": to_jsonable(list(checks)),
    }
    if error is not None:
        report["error"] = to_jsonable(error)
    return report


def write_json(path: str | Path, payload: Mapping[str, Any]) -> Path:
    text = json.dumps(to_jsonable(payload), indent=2, sort_keys=True)
    return _atomic_write_text(path, text + "\n")


def write_ndjson(path: str | Path, records: Iterable[Mapping[str, Any]]) -> Path:
    lines = [json.dumps(to_jsonable(record), sort_keys=True) for record in records]
    return _atomic_write_text(path, "".join(line + "\n" for line in lines))


def write_csv(
    path: str | Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
) -> Path:
    """CSV with the ``# gfx-lab v1`` schema line before the column header."""
    buffer = io.StringIO()
    buffer.write(CSV_SCHEMA_LINE + "\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([to_jsonable(v) for v in row])
    return _atomic_write_text(path, buffer.getvalue())


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Reads a CSV written by :func:`write_csv`; rejects other schema versions."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != CSV_SCHEMA_LINE:
        raise ValueError(f"{path} does not start with {CSV_SCHEMA_LINE!r}.")
    reader = csv.reader(lines[1:])
    header = next(reader)
    return header, [row for row in reader]
