"""Atomic file writers and the plain-text/PGM dump formats."""

from __future__ import annotations

import os
import tempfile

import numpy as np


def atomic_write_bytes(path: str, data: bytes):
    """Write via temp file + rename so readers never see a truncated file."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def format_float(x: float) -> str:
    """Shortest round-trip decimal representation; diff-stable across platforms."""
    return repr(float(x))


def grid_text(grid: np.ndarray) -> str:
    rows = [" ".join(format_float(v) for v in row) for row in np.atleast_2d(grid)]
    return "\n".join(rows) + "\n"


def write_grid(path: str, grid: np.ndarray):
    """One grid row per line, space-separated decimals."""
    atomic_write_text(path, grid_text(grid))


def read_grid(path: str) -> np.ndarray:
    with open(path) as fh:
        rows = [[float(v) for v in line.split()] for line in fh if line.strip()]
    return np.asarray(rows, dtype=np.float64)


def write_pgm(path: str, grid: np.ndarray):
    """8-bit binary PGM, min..max of the grid stretched to 0..255."""
    g = np.asarray(grid, dtype=np.float64)
    lo, hi = float(g.min()), float(g.max())
    if hi > lo:
        pixels = np.round((g - lo) / (hi - lo) * 255.0)
    else:
        pixels = np.zeros_like(g)
    h, w = g.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + pixels.astype(np.uint8).tobytes())


def write_vector_csv(path: str, values: np.ndarray, column: str):
    lines = [f"index,{column}"]
    lines.extend(f"{i},{format_float(v)}" for i, v in enumerate(values))
    atomic_write_text(path, "\n".join(lines) + "\n")
