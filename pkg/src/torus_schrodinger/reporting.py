"""Deterministic CSV and JSON artifact writers.

Every emitted byte is a pure function of (config, seed): no timestamps, no
environment echoes, stable key order.  CSV files follow RFC 4180 (CRLF line
endings, minimal quoting) with '.' decimals and 17-significant-digit floats,
so values round-trip bit-exactly through text.  JSON documents are flat
objects written with sorted keys; every document carries the config echo,
the package version, and the seed, so a result file is reproducible from
its own provenance block.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from . import __version__
from .config import ExperimentConfig, emit_config

__all__ = [
    "format_float",
    "write_csv",
    "write_json",
    "provenance",
    "VERSION_STRING",
]

VERSION_STRING = f"v{__version__}"


def format_float(value: float) -> str:
    """Full-precision decimal text: 17 significant digits, '.' separator."""
    if isinstance(value, float) and (math.isnan(value) or math.isinf(value)):
        return repr(value)  # 'nan', 'inf', '-inf'
    return format(float(value), ".17g")


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def write_csv(
    path: Path | str,
    columns: Sequence[str],
    rows: Iterable[Mapping[str, Any] | Sequence[Any]],
) -> Path:
    """Write rows (mappings or sequences) under a fixed column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\r\n")
        writer.writerow(columns)
        for row in rows:
            if isinstance(row, Mapping):
                writer.writerow([_cell(row[c]) for c in columns])
            else:
                if len(row) != len(columns):
                    raise ValueError(
                        f"row has {len(row)} cells for {len(columns)} columns"
                    )
                writer.writerow([_cell(v) for v in row])
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and (math.isnan(value) or math.isinf(value)):
        return repr(value)  # JSON has no nan/inf literals; keep them readable
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return _jsonable(value.item())  # numpy scalars
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_json(path: Path | str, payload: Mapping[str, Any]) -> Path:
    """Write a flat JSON object with sorted keys and a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clean = {key: _jsonable(value) for key, value in payload.items()}
    path.write_text(json.dumps(clean, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def provenance(config: ExperimentConfig, seed: int) -> dict[str, Any]:
    """The reproducibility block embedded in every JSON summary."""
    return {
        "config": emit_config(config),
        "version": VERSION_STRING,
        "seed": int(seed),
    }
