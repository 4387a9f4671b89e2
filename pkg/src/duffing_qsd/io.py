"""Artifact writers: delimited tables, metadata sidecars, raster dumps.

Every run emits `<name>.csv` plus `<name>.meta.json`.  The sidecar holds
the fully resolved configuration, so any artifact can be regenerated from
its own metadata without the original command line.  Floats are written
with repr (shortest round-trip form), which makes reruns at the same seed
byte-identical across platforms with IEEE doubles.
"""

import csv
import json
import os

import numpy as np

from . import __version__


def _plain(value):
    """JSON-safe copy: numpy scalars and arrays become native types."""
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str, columns: dict) -> str:
    """Write named columns of equal length; returns the path."""
    names = list(columns)
    if not names:
        raise ValueError("no columns to write")
    arrays = [np.asarray(columns[n]) for n in names]
    length = len(arrays[0])
    for n, a in zip(names, arrays):
        if a.ndim != 1:
            raise ValueError(f"column {n!r} is not one-dimensional")
        if len(a) != length:
            raise ValueError(
                f"column {n!r} has {len(a)} rows, expected {length}")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for i in range(length):
            writer.writerow([_format(a[i]) for a in arrays])
    return path


def write_meta(path: str, subcommand: str, config: dict, extras: dict | None = None) -> str:
    """Sidecar with the resolved config and any run-level scalars.

    Deliberately carries no timestamps or host details: metadata must be
    identical between reruns for the byte-identity guarantee to hold.
    """
    payload = {
        "artifact": os.path.basename(path).removesuffix(".meta.json"),
        "subcommand": subcommand,
        "version": __version__,
        "config": _plain(config),
    }
    if extras:
        payload["extras"] = _plain(extras)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_meta(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_pgm(path: str, values: np.ndarray, vmin: float | None = None,
              vmax: float | None = None) -> tuple[float, float]:
    """Binary 16-bit PGM; rows top to bottom, linear vmin..vmax ramp.

    Returns the (vmin, vmax) actually used so callers can record the
    scaling in the metadata sidecar.
    """
    a = np.asarray(values, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"raster must be two-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("raster contains non-finite values")
    lo = float(a.min()) if vmin is None else float(vmin)
    hi = float(a.max()) if vmax is None else float(vmax)
    if not hi > lo:
        hi = lo + 1.0  # constant image; map everything to zero
    scaled = np.clip((a - lo) / (hi - lo), 0.0, 1.0)
    pixels = np.round(scaled * 65535.0).astype(">u2")
    rows, cols = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return lo, hi


def read_table(path: str) -> dict:
    """Read a write_csv artifact back as {name: float array}."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty") from None
        rows = [row for row in reader if row]
    if not names:
        raise ValueError(f"{path} has no columns")
    data = {n: np.empty(len(rows)) for n in names}
    for i, row in enumerate(rows):
        if len(row) != len(names):
            raise ValueError(f"{path} row {i + 2} has {len(row)} fields, "
                             f"expected {len(names)}")
        for n, cell in zip(names, row):
            data[n][i] = float(cell)
    return data
