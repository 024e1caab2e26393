"""Thin parquet helpers shared by the dataset-facing modules.

Datasets move through the pipeline as parquet files; this module keeps the
pyarrow surface in one place. Writes are atomic (temp file + rename) so a
failed write never leaves a partial dataset behind.
"""

from __future__ import annotations

import os
from pathlib import Path

import pyarrow as pa
import pyarrow.parquet as pq

from .errors import SchemaError


def write_columns(columns: dict[str, list], path: Path | str) -> None:
    """Write named columns to a parquet file atomically."""
    path = Path(path)
    table = pa.table(columns)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        pq.write_table(table, tmp)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def read_columns(path: Path | str, required: tuple[str, ...] = ()) -> dict[str, list]:
    """Read a parquet file into python lists, checking required columns exist."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    table = pq.read_table(path)
    missing = [c for c in required if c not in table.column_names]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}; found {table.column_names}")
    return {name: table.column(name).to_pylist() for name in table.column_names}
