"""CSV/JSON artifact writers with round-trip float formatting and content hashes."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from pathlib import Path

import numpy as np

from .exceptions import InvalidInputError
from .trainer import Dataset

FLOAT_FORMAT = "{:.17g}"


def fmt(value) -> str:
    """17-significant-digit floats, plain ints/bools, empty string for None."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    return str(value)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def write_csv(path, header, rows, footer: list[str] | None = None) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        if isinstance(row, dict):
            row = [row.get(k) for k in header]
        writer.writerow([fmt(v) for v in row])
    for line in footer or ():
        buf.write(line + "\n")
    return atomic_write_text(path, buf.getvalue())


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_json(path, doc) -> Path:
    return atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def save_dataset(path, dataset: Dataset) -> Path:
    """One row per sample: inputs ``x0..`` then labels ``y0..``."""
    nx, ny = dataset.inputs.shape[1], dataset.labels.shape[1]
    header = [f"x{i}" for i in range(nx)] + [f"y{i}" for i in range(ny)]
    rows = np.hstack([dataset.inputs, dataset.labels])
    return write_csv(path, header, rows.tolist())


def load_dataset(path, meta: dict | None = None) -> Dataset:
    header, rows = read_csv(path)
    nx = sum(1 for h in header if h.startswith("x"))
    if nx == 0 or nx == len(header):
        raise InvalidInputError(f"{path}: expected x* and y* columns")
    data = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    return Dataset(data[:, :nx], data[:, nx:], dict(meta or {}, path=str(path)))
