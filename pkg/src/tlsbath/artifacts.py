"""On-disk artifact formats.

Text artifacts are comma-separated numeric tables preceded by ``#`` header lines
(``# key: value``). Numbers are written with 17 significant digits, which round-trips
float64 exactly. Binary grids use a small little-endian container::

    magic  b"TLSGRID1"
    u32    n_rows, n_cols
    3 x    (u32 byte length, utf-8 label)   row axis, column axis, values
    f64    row_axis[n_rows], col_axis[n_cols], values[n_rows * n_cols] (row-major)

Frequencies are ordinary (not angular); every axis label carries its unit.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .evolve import TimeSeries
from .signal import PeakSet, Slice, SpectralMap, TimeGrid

GRID_MAGIC = b"TLSGRID1"
_FMT = "%.17g"


class ArtifactError(ValueError):
    """Malformed artifact or data that cannot be stored faithfully."""


@dataclass(frozen=True)
class GridData:
    row_label: str
    row_axis: np.ndarray
    col_label: str
    col_axis: np.ndarray
    value_label: str
    values: np.ndarray


def as_grid_data(obj, value_label: str = "value") -> GridData:
    if isinstance(obj, GridData):
        return obj
    if isinstance(obj, SpectralMap):
        return GridData(obj.sweep_label, obj.sweep_values, "fft_freq_MHz", obj.fft_axis,
                        f"phase_fft_magnitude_au[{obj.normalization}]", obj.magnitudes)
    if isinstance(obj, TimeGrid):
        return GridData(obj.sweep_label, obj.sweep_values, "t_ns", obj.times, value_label,
                        obj.values)
    raise TypeError(f"cannot store {type(obj).__name__} as a grid")


def _real(values: np.ndarray, what: str, allow_nonfinite: bool = False) -> np.ndarray:
    v = np.asarray(values)
    if np.iscomplexobj(v):
        if np.any(v.imag != 0.0):
            raise ArtifactError(f"{what} has non-zero imaginary parts")
        v = v.real
    v = np.asarray(v, dtype=np.float64)
    if not allow_nonfinite and not np.all(np.isfinite(v)):
        raise ArtifactError(f"{what} contains NaN or infinite values")
    return v


def _label(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_grid(obj, value_label: str = "value") -> bytes:
    g = as_grid_data(obj, value_label)
    rows = _real(g.row_axis, "row axis").ravel()
    cols = _real(g.col_axis, "column axis").ravel()
    vals = _real(g.values, "grid values")
    if vals.shape != (rows.size, cols.size):
        raise ArtifactError("grid shape does not match its axes")
    parts = [
        GRID_MAGIC,
        struct.pack("<II", rows.size, cols.size),
        _label(g.row_label),
        _label(g.col_label),
        _label(g.value_label),
        rows.astype("<f8").tobytes(),
        cols.astype("<f8").tobytes(),
        np.ascontiguousarray(vals).astype("<f8").tobytes(),
    ]
    return b"".join(parts)


def decode_grid(data: bytes) -> GridData:
    if data[:8] != GRID_MAGIC:
        raise ArtifactError("not a grid file (bad magic bytes)")
    pos = 8
    try:
        n_rows, n_cols = struct.unpack_from("<II", data, pos)
        pos += 8
        labels = []
        for _ in range(3):
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            labels.append(data[pos:pos + n].decode("utf-8"))
            pos += n

        def take(count):
            nonlocal pos
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
            pos += 8 * count
            return arr

        rows = take(n_rows)
        cols = take(n_cols)
        vals = take(n_rows * n_cols).reshape(n_rows, n_cols)
    except (struct.error, ValueError) as exc:
        raise ArtifactError(f"truncated grid file: {exc}") from exc
    if pos != len(data):
        raise ArtifactError("trailing bytes after grid payload")
    return GridData(labels[0], rows, labels[1], cols, labels[2], vals)


def emit_grid(obj, path, value_label: str = "value") -> Path:
    path = Path(path)
    path.write_bytes(encode_grid(obj, value_label))
    return path


def read_grid(path) -> GridData:
    return decode_grid(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# text tables


def format_table(columns: Sequence[str], data: np.ndarray, header: Mapping[str, str]) -> str:
    data = _real(np.asarray(data).reshape(-1, len(columns)) if np.size(data) else
                 np.zeros((0, len(columns))), "table", allow_nonfinite=True)
    lines = [f"# {k}: {v}" for k, v in header.items()]
    lines.append("# columns: " + ",".join(columns))
    for row in data:
        lines.append(",".join(_FMT % x for x in row))
    return "\n".join(lines) + "\n"


def emit_table(columns: Sequence[str], data, path, header: Mapping[str, str]) -> Path:
    path = Path(path)
    path.write_text(format_table(columns, np.asarray(data), header), encoding="utf-8")
    return path


@dataclass(frozen=True)
class TextTable:
    header: dict[str, str]
    columns: tuple[str, ...]
    data: np.ndarray


def read_table(path) -> TextTable:
    header: dict[str, str] = {}
    columns: tuple[str, ...] = ()
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition(":")
            if key == "columns":
                columns = tuple(c for c in val.strip().split(",") if c)
            else:
                header[key.strip()] = val.strip()
        elif line.strip():
            rows.append([float(x) for x in line.split(",")])
    if not columns:
        raise ArtifactError(f"{path}: missing '# columns:' header")
    data = np.array(rows, dtype=float).reshape(len(rows), len(columns))
    return TextTable(header, columns, data)


def emit_series(series: TimeSeries | Sequence[TimeSeries], path, header: Mapping[str, str],
                value_unit: str = "") -> Path:
    """One time column plus one column per series (complex series get _re/_im columns)."""
    group = [series] if isinstance(series, TimeSeries) else list(series)
    if not group:
        raise ArtifactError("no series to write")
    t = group[0].times
    cols, data = ["t_ns"], [t]
    for s in group:
        if len(s) != t.size or s.dt != group[0].dt or s.t0 != group[0].t0:
            raise ArtifactError("series in one file must share a time grid")
        name = s.label or "value"
        v = np.asarray(s.samples)
        if np.iscomplexobj(v):
            cols += [f"{name}_re", f"{name}_im"]
            data += [v.real, v.imag]
        else:
            cols.append(name)
            data.append(v)
    hdr = dict(header)
    hdr.setdefault("kind", "time_series")
    hdr["units"] = f"t: ns; values: {value_unit or 'dimensionless'}"
    return emit_table(cols, np.column_stack(data), path, hdr)


def read_series(path) -> list[TimeSeries]:
    tab = read_table(path)
    if tab.columns[0] != "t_ns":
        raise ArtifactError("first column must be t_ns")
    t = tab.data[:, 0]
    dt = float(t[1] - t[0]) if t.size > 1 else 1.0
    out = []
    k = 1
    while k < len(tab.columns):
        name = tab.columns[k]
        if name.endswith("_re") and k + 1 < len(tab.columns) and tab.columns[k + 1].endswith("_im"):
            out.append(TimeSeries(float(t[0]), dt, tab.data[:, k] + 1j * tab.data[:, k + 1], name[:-3]))
            k += 2
        else:
            out.append(TimeSeries(float(t[0]), dt, tab.data[:, k], name))
            k += 1
    return out


def emit_slice(sl: Slice, path, header: Mapping[str, str]) -> Path:
    hdr = dict(header)
    hdr.setdefault("kind", "slice")
    return emit_table((sl.axis_label, "magnitude_au"), np.column_stack([sl.axis, sl.values]),
                      path, hdr)


def emit_peaks(peaks: PeakSet, path, header: Mapping[str, str]) -> Path:
    """Peak table; an empty set still writes the full header."""
    hdr = dict(header)
    hdr.setdefault("kind", "peaks")
    hdr["threshold_au"] = _FMT % peaks.threshold
    hdr["min_separation_GHz"] = _FMT % peaks.min_separation
    hdr["span_GHz"] = f"{_FMT % peaks.span[0]},{_FMT % peaks.span[1]}"
    hdr["count"] = str(len(peaks))
    data = np.column_stack([peaks.frequencies, peaks.magnitudes]) if len(peaks) else np.zeros((0, 2))
    return emit_table(("freq_GHz", "magnitude_au"), data, path, hdr)


def read_peaks(path) -> PeakSet:
    tab = read_table(path)
    lo, hi = (float(x) for x in tab.header["span_GHz"].split(","))
    return PeakSet(tab.data[:, 0], tab.data[:, 1], float(tab.header["threshold_au"]),
                   float(tab.header["min_separation_GHz"]), (lo, hi))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
