"""On-disk formats: the CSV matrix dialect and the echogram bundle.

CSV dialect: comma separated, ``.`` decimal point, no header, LF line
endings, 17 significant digits, empty field for a missing value.

An echogram bundle is a directory holding a ``meta`` key=value file and one
CSV per (frequency, day) named ``f<kHz>_d<YYYY-MM-DD>.csv`` whose rows are
depth bins (shallow to deep) and columns are within-day time bins.
"""

import csv
import os
from pathlib import Path

import numpy as np

from .echogram import EchogramCube
from .errors import DataError, LayoutError

BUNDLE_FORMAT = "echogram-bundle"
BUNDLE_VERSION = "1"


def format_number(v):
    if not np.isfinite(v):
        return ""
    return format(float(v), ".17g")


def write_matrix_csv(path, matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in matrix:
            fh.write(",".join(format_number(v) for v in row))
            fh.write("\n")


def read_matrix_csv(path):
    """Read a dialect CSV into a float array; empty fields become NaN."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            try:
                rows.append([float(v) if v.strip() else np.nan for v in row])
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: {exc}") from None
    if not rows:
        return np.empty((0, 0))
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise DataError(f"{path}: ragged rows")
    return np.array(rows, dtype=np.float64)


def write_rows_csv(path, rows, header=None):
    """Write a small table (mixed ints/floats/strings) in the same dialect."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_number(v)
    return str(v)


def _freq_label(f):
    return format(float(f), "g")


def frame_name(freq_khz, day):
    return f"f{_freq_label(freq_khz)}_d{np.datetime_as_string(np.datetime64(day, 'D'))}.csv"


def _join(values):
    return ",".join(format_number(v) for v in values)


def write_bundle(path, cube):
    """Write ``cube`` as an echogram bundle directory (created if needed)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    n_depth, n_ping, n_freq, n_day = cube.shape
    meta = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "n_depth": n_depth,
        "n_ping": n_ping,
        "n_freq": n_freq,
        "n_day": n_day,
        "depth_bin_m": "" if cube.depth_bin_m is None else format_number(cube.depth_bin_m),
        "time_bin_s": "" if cube.time_bin_s is None else format_number(cube.time_bin_s),
        "depth_axis_m": _join(cube.depth_axis),
        "time_axis_s": _join(cube.time_axis),
        "frequencies_khz": ",".join(_freq_label(f) for f in cube.freq_axis),
        "days": ",".join(np.datetime_as_string(cube.day_axis)),
    }
    with open(path / "meta", "w", encoding="utf-8", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"{key}={value}\n")
    for fi, freq in enumerate(cube.freq_axis):
        for di, day in enumerate(cube.day_axis):
            write_matrix_csv(path / frame_name(freq, day), cube.values[:, :, fi, di])


def read_meta(path):
    meta = {}
    with open(Path(path) / "meta", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataError(f"malformed meta line: {line!r}")
            meta[key.strip()] = value.strip()
    return meta


def _floats(text):
    return np.array([float(v) for v in text.split(",")]) if text else np.empty(0)


def read_bundle(path):
    """Load an echogram bundle into an :class:`EchogramCube`."""
    path = Path(path)
    if not (path / "meta").is_file():
        raise DataError(f"{path} is not an echogram bundle (no meta file)")
    meta = read_meta(path)
    try:
        shape = tuple(int(meta[k]) for k in ("n_depth", "n_ping", "n_freq", "n_day"))
        freqs = _floats(meta["frequencies_khz"])
        days = np.array(meta["days"].split(","), dtype="datetime64[D]")
    except KeyError as exc:
        raise DataError(f"meta is missing key {exc}") from None
    depth_bin = float(meta["depth_bin_m"]) if meta.get("depth_bin_m") else None
    time_bin = float(meta["time_bin_s"]) if meta.get("time_bin_s") else None
    if meta.get("depth_axis_m"):
        depth_axis = _floats(meta["depth_axis_m"])
    else:
        depth_axis = (np.arange(shape[0]) + 0.5) * (depth_bin or 1.0)
    if meta.get("time_axis_s"):
        time_axis = _floats(meta["time_axis_s"])
    else:
        time_axis = np.arange(shape[1]) * (time_bin or 1.0)
    if len(freqs) != shape[2] or len(days) != shape[3]:
        raise DataError("meta frequency/day lists disagree with declared axis lengths")

    values = np.empty(shape)
    for fi, freq in enumerate(freqs):
        for di, day in enumerate(days):
            frame_path = path / frame_name(freq, day)
            if not frame_path.is_file():
                raise DataError(f"missing frame {frame_path.name}")
            frame = read_matrix_csv(frame_path)
            if frame.shape != shape[:2]:
                raise LayoutError(f"{frame_path.name} has shape {frame.shape}, expected {shape[:2]}")
            values[:, :, fi, di] = frame
    return EchogramCube(values, depth_axis, time_axis, freqs, days,
                        depth_bin_m=depth_bin, time_bin_s=time_bin)


def is_bundle(path):
    return os.path.isfile(os.path.join(path, "meta"))
