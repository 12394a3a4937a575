"""CSV matrices and flat ``key=value`` config files."""

from __future__ import annotations

import csv
import os

import numpy as np


class InputError(ValueError):
    """Malformed or inconsistent user input."""


def read_matrix(path, header=False) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    if header:
        rows = rows[1:]
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path} contains no data rows")
    width = len(rows[0])
    try:
        data = [[float(c) for c in r] for r in rows]
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None
    bad = [i for i, r in enumerate(data) if len(r) != width]
    if bad:
        raise InputError(f"{path}: row {bad[0] + 1} has {len(data[bad[0]])} fields, expected {width}")
    return np.array(data, dtype=float)


def format_value(v) -> str:
    # repr of a Python float is the shortest string that round-trips exactly
    return repr(float(v))


def write_matrix(path, mat):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    with open(path, "w", newline="") as fh:
        for row in mat:
            fh.write(",".join(format_value(v) for v in row))
            fh.write("\n")


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) if isinstance(v, (float, np.floating)) else v for v in row])


def read_config(path) -> dict:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InputError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def write_config(path, values: dict):
    with open(path, "w") as fh:
        for key in sorted(values):
            v = values[key]
            if isinstance(v, float):
                v = format_value(v)
            fh.write(f"{key}={v}\n")


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
