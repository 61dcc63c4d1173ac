"""CSV emission: header first, floats with 9 significant digits."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return f"{v:.9g}"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def emit_csv(rows, path, fieldnames=None):
    """Write dict rows with a uniform schema; returns the path."""
    rows = list(rows)
    if fieldnames is None:
        if not rows:
            raise ValueError("fieldnames are required for an empty row set")
        fieldnames = list(rows[0])
    fieldnames = list(fieldnames)
    for i, row in enumerate(rows):
        if set(row) != set(fieldnames):
            raise ValueError(f"row {i} keys {sorted(row)} differ from header {fieldnames}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fieldnames)
        for row in rows:
            writer.writerow([format_value(row[k]) for k in fieldnames])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
