"""Output files: series CSV, run metadata and raw alpha sample dumps.

Binary alpha dump layout (all little-endian)::

    offset  size  field
    0       4     magic: b"QAL8" (float64 payload) or b"QAL4" (float32 payload)
    4       8     uint64 number of samples (trajectories)
    12      8     uint64 number of modes
    20      8     float64 time in laser cycles
    28      ...   payload: samples x modes complex values, row-major, each stored
                  as an interleaved (real, imag) float pair

Every file is written to a temporary name in the target directory and renamed
into place, so a crashed run never leaves a truncated output behind.
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .observables import SERIES_COLUMNS, ObservableSeries

SCHEMA_VERSION = 1
_HEADER = struct.Struct("<4sQQd")
_MAGIC = {np.dtype("<f8"): b"QAL8", np.dtype("<f4"): b"QAL4"}
_DTYPE = {v: k for k, v in _MAGIC.items()}


def atomic_write(path, data: bytes | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode() if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def _fmt(x: float) -> str:
    # shortest repr that round-trips; platform independent
    return "nan" if np.isnan(x) else repr(float(x))


def series_to_csv(series: ObservableSeries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SERIES_COLUMNS)
    for row in series.to_array():
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_series(path, series: ObservableSeries) -> Path:
    return atomic_write(path, series_to_csv(series))


def read_series(path) -> ObservableSeries:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != SERIES_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        rows = [[float(v) for v in r] for r in reader]
    return ObservableSeries.from_array(np.array(rows, dtype=float).reshape(-1, len(SERIES_COLUMNS)))


def write_json(path, payload: dict) -> Path:
    return atomic_write(path, json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def alpha_filename(time: float) -> str:
    return f"alpha_t{time:09.4f}.bin"


def encode_alpha(alpha: np.ndarray, time: float) -> bytes:
    alpha = np.asarray(alpha)
    if alpha.ndim != 2 or not np.iscomplexobj(alpha):
        raise ValueError("alpha must be a complex (samples, modes) array")
    real = np.dtype("<f4") if alpha.dtype == np.complex64 else np.dtype("<f8")
    pairs = np.empty(alpha.shape + (2,), dtype=real)
    pairs[..., 0] = alpha.real
    pairs[..., 1] = alpha.imag
    return _HEADER.pack(_MAGIC[real], alpha.shape[0], alpha.shape[1], float(time)) + pairs.tobytes()


def write_alpha(path, alpha: np.ndarray, time: float) -> Path:
    return atomic_write(path, encode_alpha(alpha, time))


def read_alpha(path) -> tuple[np.ndarray, float]:
    """Inverse of :func:`write_alpha`; returns (alpha, time in laser cycles)."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: file too short for an alpha dump")
    magic, n_samples, n_modes, time = _HEADER.unpack_from(raw)
    if magic not in _DTYPE:
        raise ValueError(f"{path}: bad magic {magic!r}")
    real = _DTYPE[magic]
    expected = _HEADER.size + n_samples * n_modes * 2 * real.itemsize
    if len(raw) != expected:
        raise ValueError(f"{path}: size {len(raw)} does not match header ({expected})")
    pairs = np.frombuffer(raw, dtype=real, offset=_HEADER.size).reshape(n_samples, n_modes, 2)
    cplx = np.complex64 if real.itemsize == 4 else np.complex128
    alpha = np.empty((n_samples, n_modes), dtype=cplx)
    # component-wise copy keeps inf/nan parts intact (re + 1j*im would mix them)
    alpha.real = pairs[..., 0]
    alpha.imag = pairs[..., 1]
    return alpha, time
