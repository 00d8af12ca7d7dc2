"""Binned multi-frequency echograms and their restructuring into a data matrix.

A cube is indexed ``(depth, ping, freq, day)``.  Flattening turns every day
into one column; inside a column depth varies fastest, then within-day time
bin (ping), then frequency.  That is exactly Fortran order on the first three
axes, so flattening is a reshape and the round trip is bitwise exact.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .errors import (
    CoordinateError,
    DataError,
    IncompleteDataError,
    LayoutError,
    ParameterError,
    UnfillableError,
)

SECONDS_PER_DAY = 86400.0

FILL_POLICIES = ("fail", "column-mean", "constant")


@dataclass(frozen=True, eq=False)
class EchogramCube:
    """Binned backscatter on a (depth, ping, freq, day) grid.

    ``time_axis`` holds the start of each within-day bin in seconds since
    midnight UTC; ``depth_axis`` holds bin-center depths in meters.  Missing
    cells are flagged in ``missing_mask`` and stored as NaN.
    """

    values: np.ndarray
    depth_axis: np.ndarray
    time_axis: np.ndarray
    freq_axis: np.ndarray
    day_axis: np.ndarray
    missing_mask: np.ndarray = None
    depth_bin_m: float = None
    time_bin_s: float = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 4:
            raise DataError(f"cube values must be 4-D, got shape {values.shape}")
        depth = np.asarray(self.depth_axis, dtype=np.float64)
        times = np.asarray(self.time_axis, dtype=np.float64)
        freqs = np.asarray(self.freq_axis, dtype=np.float64)
        days = np.asarray(self.day_axis, dtype="datetime64[D]")
        axes = (depth, times, freqs, days)
        if tuple(a.shape[0] for a in axes) != values.shape or any(a.ndim != 1 for a in axes):
            raise DataError(
                f"axis lengths {tuple(len(a) for a in axes)} do not match values {values.shape}"
            )
        steps = np.diff(depth)
        if np.any(steps <= 0):
            raise CoordinateError("depth_axis must be strictly increasing")
        if self.depth_bin_m is not None and steps.size:
            if np.max(np.abs(steps - self.depth_bin_m)) > 1e-9:
                raise CoordinateError(
                    f"depth_axis spacing deviates from declared bin size {self.depth_bin_m}"
                )
        if np.any(np.diff(times) <= 0):
            raise CoordinateError("time_axis must be strictly increasing")
        if np.any(np.diff(days.astype(np.int64)) <= 0):
            raise CoordinateError("day_axis must be strictly increasing without duplicates")

        if self.missing_mask is None:
            mask = ~np.isfinite(values)
        else:
            mask = np.asarray(self.missing_mask, dtype=bool)
            if mask.shape != values.shape:
                raise DataError("missing_mask shape does not match values")
        if not np.all(np.isfinite(values[~mask])):
            raise DataError("non-missing cells must be finite")
        values = values.copy()
        values[mask] = np.nan
        for arr in (values, mask, depth, times, freqs, days):
            arr.setflags(write=False)

        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing_mask", mask)
        object.__setattr__(self, "depth_axis", depth)
        object.__setattr__(self, "time_axis", times)
        object.__setattr__(self, "freq_axis", freqs)
        object.__setattr__(self, "day_axis", days)

    @property
    def shape(self):
        return self.values.shape

    @property
    def layout(self):
        return self.values.shape[:3]

    @property
    def has_missing(self):
        return bool(self.missing_mask.any())


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """D x T matrix with the layout needed to undo flattening.

    ``offset`` is the constant that must be added back to recover the
    physical values (nonzero after :func:`shift_nonnegative`).
    """

    values: np.ndarray
    layout: tuple
    day_axis: np.ndarray = None
    offset: float = 0.0
    freq_axis: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"data matrix must be 2-D, got shape {values.shape}")
        layout = tuple(int(n) for n in self.layout)
        if len(layout) != 3 or int(np.prod(layout)) != values.shape[0]:
            raise LayoutError(f"layout {layout} does not match {values.shape[0]} rows")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", layout)

    @property
    def shape(self):
        return self.values.shape

    def restored(self):
        """Values with the nonnegativity offset added back."""
        return self.values + self.offset


def _as_seconds(time):
    time = np.asarray(time)
    if np.issubdtype(time.dtype, np.datetime64):
        ns = time.astype("datetime64[ns]").astype(np.int64)
        return ns / 1e9
    return time.astype(np.float64)


def bin_mvbs(sv, depth, time, depth_bin_m=5.0, time_bin_s=200.0, freq_axis=None,
             keep_empty_time_bins=False):
    """Average calibrated Sv into non-overlapping depth x time bins.

    Parameters
    ----------
    sv : array, shape (n_freq, n_range, n_ping) or (n_range, n_ping)
        Sv in dB re 1 m^-1.  NaN samples are ignored.
    depth : array, shape (n_range,)
        Sample depths in meters, strictly increasing.
    time : array, shape (n_ping,)
        Ping times, either ``datetime64`` or seconds since the epoch (UTC),
        strictly increasing.
    keep_empty_time_bins : bool
        By default within-day bins that are empty on every day at every
        depth and frequency are dropped (duty-cycled sounders only ping part
        of each hour).

    Returns
    -------
    EchogramCube
        Mean taken in the linear domain, reported in dB.  Bins without
        samples are flagged missing.
    """
    if not depth_bin_m > 0 or not time_bin_s > 0:
        raise ParameterError("bin sizes must be positive")
    sv = np.asarray(sv, dtype=np.float64)
    if sv.ndim == 2:
        sv = sv[None]
    if sv.ndim != 3:
        raise DataError(f"sv must be 2-D or 3-D, got shape {sv.shape}")
    n_freq, n_range, n_ping = sv.shape
    depth = np.asarray(depth, dtype=np.float64)
    seconds = _as_seconds(time)
    if depth.shape != (n_range,) or seconds.shape != (n_ping,):
        raise CoordinateError("coordinate lengths do not match sv")
    if n_range == 0 or n_ping == 0:
        raise DataError("sv grid is empty")
    if np.any(np.diff(depth) <= 0) or not np.all(np.isfinite(depth)):
        raise CoordinateError("depth coordinate must be finite and strictly increasing")
    if np.any(np.diff(seconds) <= 0) or not np.all(np.isfinite(seconds)):
        raise CoordinateError("time coordinate must be finite and strictly increasing")
    if freq_axis is None:
        freq_axis = np.arange(n_freq, dtype=np.float64)
    freq_axis = np.asarray(freq_axis, dtype=np.float64)
    if freq_axis.shape != (n_freq,):
        raise DataError("freq_axis length does not match sv")

    origin = np.floor(depth[0] / depth_bin_m) * depth_bin_m
    row_bin = np.floor((depth - origin) / depth_bin_m).astype(np.int64)
    n_depth = int(row_bin[-1]) + 1

    day_number = np.floor(seconds / SECONDS_PER_DAY).astype(np.int64)
    second_of_day = seconds - day_number * SECONDS_PER_DAY
    n_time = int(np.ceil(SECONDS_PER_DAY / time_bin_s))
    col_bin = np.minimum(np.floor(second_of_day / time_bin_s).astype(np.int64), n_time - 1)
    first_day = day_number[0]
    col_day = day_number - first_day
    n_day = int(col_day[-1]) + 1

    sums = np.zeros((n_depth, n_time, n_freq, n_day))
    counts = np.zeros((n_depth, n_time, n_freq, n_day), dtype=np.int64)
    for f in range(n_freq):
        lin = np.ascontiguousarray(10.0 ** (sv[f] / 10.0))
        s, c = kernels.accumulate_bins(lin, row_bin, col_bin, col_day, n_depth, n_time, n_day)
        sums[:, :, f, :] = s
        counts[:, :, f, :] = c

    missing = counts == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        values = 10.0 * np.log10(sums / counts)
    values[missing] = np.nan

    time_axis = np.arange(n_time) * float(time_bin_s)
    if not keep_empty_time_bins:
        keep = ~missing.all(axis=(0, 2, 3))
        values, missing, time_axis = values[:, keep], missing[:, keep], time_axis[keep]

    depth_axis = origin + (np.arange(n_depth) + 0.5) * depth_bin_m
    day_axis = (np.arange(n_day) + first_day).astype("datetime64[D]")
    return EchogramCube(values, depth_axis, time_axis, freq_axis, day_axis, missing,
                        depth_bin_m=float(depth_bin_m), time_bin_s=float(time_bin_s))


def fill_missing(cube, policy="fail", value=None):
    """Replace missing cells.

    ``column-mean`` uses the mean (dB domain) of the same depth/ping/freq
    pixel over the days where it is present; ``constant`` writes ``value``;
    ``fail`` raises if anything is missing.
    """
    if policy not in FILL_POLICIES:
        raise ParameterError(f"unknown fill policy {policy!r}; expected one of {FILL_POLICIES}")
    mask = cube.missing_mask
    if not mask.any():
        return cube
    if policy == "fail":
        raise IncompleteDataError(f"{int(mask.sum())} missing cells in echogram")
    values = np.array(cube.values)
    if policy == "constant":
        if value is None or not np.isfinite(value):
            raise ParameterError("constant fill needs a finite value")
        values[mask] = value
    else:
        present = (~mask).sum(axis=3)
        if np.any(present == 0):
            raise UnfillableError("some pixel is missing on every day")
        means = np.where(mask, 0.0, values).sum(axis=3) / present
        values = np.where(mask, means[..., None], values)
    return replace(cube, values=values, missing_mask=np.zeros_like(mask))


def flatten(cube):
    """Stack every day's echogram into one column of a D x T matrix."""
    if cube.has_missing:
        raise IncompleteDataError("cube has missing cells; apply fill_missing first")
    n_depth, n_ping, n_freq, n_day = cube.shape
    x = cube.values.reshape((n_depth * n_ping * n_freq, n_day), order="F")
    return DataMatrix(np.array(x), (n_depth, n_ping, n_freq), cube.day_axis, 0.0,
                      cube.freq_axis)


def unflatten(column, layout):
    """Inverse of one flattened column: returns an (n_depth, n_ping, n_freq) array.

    A 2-D input (D x N) is unflattened column by column into
    (n_depth, n_ping, n_freq, N).
    """
    column = np.asarray(column)
    layout = tuple(int(n) for n in layout)
    size = int(np.prod(layout))
    if column.ndim == 1:
        if column.shape[0] != size:
            raise LayoutError(f"vector of length {column.shape[0]} does not fit layout {layout}")
        return column.reshape(layout, order="F")
    if column.ndim == 2:
        if column.shape[0] != size:
            raise LayoutError(f"matrix with {column.shape[0]} rows does not fit layout {layout}")
        return column.reshape(layout + (column.shape[1],), order="F")
    raise LayoutError("unflatten expects a vector or a matrix")


def shift_nonnegative(m):
    """Subtract the global minimum so the smallest entry is exactly 0.

    The subtracted minimum is accumulated into ``offset``; ``restored()``
    adds it back.  The round trip is exact whenever ``x - min`` is exactly
    representable, which holds for dB-scaled backscatter.
    """
    x = m.values
    if x.size == 0:
        raise ParameterError("cannot shift an empty matrix")
    if not np.all(np.isfinite(x)):
        raise DataError("matrix contains non-finite values")
    low = float(x.min())
    if low == 0.0:
        return replace(m, values=np.array(x))
    return replace(m, values=x - low, offset=m.offset + low)
