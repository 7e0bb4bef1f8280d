"""CSV tables and the JSON-lines run manifest, written atomically."""

from __future__ import annotations

import json
import math
import os
import platform
import tempfile
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
import scipy


def format_cell(v: Any) -> str:
    """Shortest round-trip text for floats; integers and strings as-is."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return repr(f)
    s = str(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def csv_text(columns: Sequence[str], rows: Sequence[dict]) -> str:
    lines = [",".join(columns)]
    for r in rows:
        lines.append(",".join(format_cell(r.get(c)) for c in columns))
    return "\n".join(lines) + "\n"


def atomic_write(path: str, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[dict] = field(default_factory=list)


def versions() -> dict[str, str]:
    from . import __version__

    return {"snls": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def write_outputs(
    tables: Sequence[Table],
    output_dir: str,
    experiment: str,
    config_values: dict,
    config_hash: str,
    master_seed: int,
    started: float,
    extra: Optional[dict] = None,
) -> dict:
    """Write each table as ``<name>.csv`` and append one manifest line.

    A table without rows is recorded in the manifest with a zero row count and
    no CSV file is written for it.
    """
    os.makedirs(output_dir, exist_ok=True)
    files = []
    for t in tables:
        entry = {"name": f"{t.name}.csv", "row_count": len(t.rows)}
        if t.rows:
            atomic_write(os.path.join(output_dir, entry["name"]), csv_text(t.columns, t.rows).encode())
        files.append(entry)
    finished = time.time()
    manifest = {
        "experiment": experiment,
        "config_hash": config_hash,
        "master_seed": master_seed,
        "started": started,
        "finished": finished,
        "wall_time": finished - started,
        "versions": versions(),
        "files": files,
        "config": config_values,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(output_dir, "manifest.jsonl")
    previous = b""
    if os.path.exists(path):
        with open(path, "rb") as fh:
            previous = fh.read()
    line = json.dumps(manifest, sort_keys=True, allow_nan=True) + "\n"
    atomic_write(path, previous + line.encode())
    return manifest
