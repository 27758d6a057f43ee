"""CSV/JSON ingestion and atomic emission of experiment outputs."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np

from mosco_lab.errors import ArtifactIOError, MalformedInputError, Suggestion
from mosco_lab.fields import FloatArray


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    if value is None:
        return ""
    return str(value)


def _read_text(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedInputError(
            f"{path} is not valid UTF-8 (byte offset {exc.start}).",
            details={"path": str(path), "offset": exc.start},
            suggestion=Suggestion(action="re-encode the file", fix="Save the CSV as UTF-8 text."),
        ) from exc
    except OSError as exc:
        raise ArtifactIOError(
            f"Cannot read {path}: {exc.strerror or exc}",
            details={"path": str(path)},
            suggestion=Suggestion(action="check the path", fix="Point the scenario at an existing UTF-8 file."),
        ) from exc


def _parse_rows(path: Path) -> list[list[float]]:
    rows = []
    for number, row in enumerate(csv.reader(io.StringIO(_read_text(path))), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            rows.append([float(cell) for cell in row])
        except ValueError as exc:
            raise MalformedInputError(
                f"{path}:{number}: non-numeric entry.",
                details={"path": str(path), "line": number},
            ) from exc
    return rows


def read_distance_csv(path: str | Path) -> FloatArray:
    """N rows by N columns, no header."""
    source = Path(path)
    rows = _parse_rows(source)
    if not rows or any(len(row) != len(rows) for row in rows):
        raise MalformedInputError(
            f"{source} is not a square matrix.",
            details={"path": str(source), "rows": len(rows)},
        )
    return np.asarray(rows, dtype=np.float64)


def read_vector_csv(path: str | Path, size: int | None = None) -> FloatArray:
    """Single column, one value per point."""
    source = Path(path)
    rows = _parse_rows(source)
    if any(len(row) != 1 for row in rows):
        raise MalformedInputError(f"{source} must have exactly one column.", details={"path": str(source)})
    vector = np.asarray([row[0] for row in rows], dtype=np.float64)
    if size is not None and vector.shape[0] != size:
        raise MalformedInputError(
            f"{source} has {vector.shape[0]} values, expected {size}.",
            details={"path": str(source)},
        )
    return vector


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write through a sibling temp file and rename over the target."""
    target = Path(path)
    temp_name: str | None = None
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with tempfile.NamedTemporaryFile(
            prefix=f".{target.name}.",
            suffix=".tmp",
            dir=target.parent,
            mode="w",
            encoding="utf-8",
            newline="",
            delete=False,
        ) as handle:
            temp_name = handle.name
            handle.write(text)
        os.replace(temp_name, target)
    except OSError as exc:
        if temp_name is not None:
            Path(temp_name).unlink(missing_ok=True)
        raise ArtifactIOError(
            f"Cannot write {target}: {exc.strerror or exc}",
            details={"path": str(target)},
        ) from exc
    return target


def csv_text(columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_value(row.get(column)) for column in columns])
    return buffer.getvalue()


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    return atomic_write_text(path, csv_text(columns, rows))


def json_text(payload: Any) -> str:
    return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2, default=str) + "\n"


def write_json(path: str | Path, payload: Any) -> Path:
    return atomic_write_text(path, json_text(payload))


def write_vector_csv(path: str | Path, values: FloatArray) -> Path:
    return atomic_write_text(path, "".join(format_value(float(v)) + "\n" for v in values))
