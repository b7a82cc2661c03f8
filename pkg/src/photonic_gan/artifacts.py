"""CSV tables, PGM image grids, and reproducibility manifests."""

from __future__ import annotations

import csv
import json
import os
import platform
from pathlib import Path

import numpy as np

from . import __version__

__all__ = [
    "ArtifactError",
    "format_value",
    "write_csv",
    "read_csv",
    "append_csv_row",
    "image_grid",
    "write_pgm",
    "read_pgm",
    "write_manifest",
]


class ArtifactError(OSError):
    pass


def format_value(v) -> str:
    """Six significant digits for reals; everything else via str()."""
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise ArtifactError(f"cannot write CSV {path}: {exc}") from exc
    return path


def append_csv_row(path, header, row) -> None:
    """Append one row, writing the header first if the file is new; flushed to disk."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    try:
        with open(path, "a", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if new:
                w.writerow(header)
            w.writerow([format_value(v) for v in row])
            fh.flush()
            os.fsync(fh.fileno())
    except OSError as exc:
        raise ArtifactError(f"cannot append to CSV {path}: {exc}") from exc


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ArtifactError(f"cannot read CSV {path}: {exc}") from exc
    if not rows:
        return [], []
    return rows[0], rows[1:]


def image_grid(images: np.ndarray, cols: int = 7, side: int = 14) -> np.ndarray:
    """Tile flattened [0, 1] images row-major into an 8-bit grid with no gutters."""
    imgs = np.asarray(images, dtype=float).reshape(-1, side, side)
    n = imgs.shape[0]
    rows = -(-n // cols)
    grid = np.zeros((rows * side, cols * side))
    for k in range(n):
        r, c = divmod(k, cols)
        grid[r * side:(r + 1) * side, c * side:(c + 1) * side] = imgs[k]
    return np.round(np.clip(grid, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path, pixels: np.ndarray) -> Path:
    """Binary P5 PGM with maxval 255."""
    a = np.ascontiguousarray(pixels, dtype=np.uint8)
    if a.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
            fh.write(a.tobytes())
    except OSError as exc:
        raise ArtifactError(f"cannot write PGM {path}: {exc}") from exc
    return path


def read_pgm(path) -> np.ndarray:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read PGM {path}: {exc}") from exc
    # header: magic, width, height, maxval separated by whitespace, then one byte
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    data = raw[pos + 1:pos + 1 + w * h]
    if len(data) != w * h:
        raise ValueError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def write_manifest(path, config: dict, seeds, extra: dict | None = None) -> Path:
    payload = {
        "config": config,
        "seeds": list(seeds),
        "code_version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
    }
    if extra:
        payload.update(extra)
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
    except OSError as exc:
        raise ArtifactError(f"cannot write manifest {path}: {exc}") from exc
    return path
