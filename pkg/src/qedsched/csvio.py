"""Append-safe CSV tables with a fixed column schema."""

from __future__ import annotations

import csv
import hashlib
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError


def schema_hash(columns: Sequence[str]) -> str:
    return hashlib.sha256(",".join(columns).encode()).hexdigest()[:12]


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def append_rows(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, object]]) -> Path:
    """Append ``rows`` to ``path``, writing the header first if the file is new.

    An existing file whose header differs from ``columns`` is refused.
    """
    path = Path(path)
    columns = list(columns)
    if path.exists() and path.stat().st_size > 0:
        with path.open(newline="") as fh:
            header = next(csv.reader(fh), [])
        if schema_hash(header) != schema_hash(columns):
            raise ConfigError(f"{path} has columns {header}, expected {columns}")
        mode = "a"
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        mode = "w"
    with path.open(mode, newline="") as fh:
        w = csv.writer(fh)
        if mode == "w":
            w.writerow(columns)
        for row in rows:
            missing = set(columns) - set(row)
            if missing:
                raise ValueError(f"row is missing columns {sorted(missing)}")
            w.writerow([_fmt(row[c]) for c in columns])
    return path


def read_rows(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
