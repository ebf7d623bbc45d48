"""Dataset loading, chronological splits, scaling, windowing and synthetic data."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError
from .numeric import DTYPE, center, make_rng


@dataclass(frozen=True)
class SeriesDataset:
    name: str
    values: np.ndarray  # (rows, N)
    column_names: tuple[str, ...]
    frequency: str | None = None

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "SeriesDataset":
        return replace(self, values=values)


@dataclass(frozen=True)
class SplitSpec:
    """Chronological split. ``mode`` is "ratio" (cuts at floor(rows * ratio)) or
    one of the fixed calendar layouts used for the ETT benchmark files."""

    train: float = 0.7
    val: float = 0.1
    test: float = 0.2
    mode: str = "ratio"

    def __post_init__(self):
        if self.mode not in ("ratio", "ett_hour", "ett_minute"):
            raise ConfigError(f"unknown split mode {self.mode!r}")
        if min(self.train, self.val, self.test) <= 0:
            raise ConfigError("split ratios must all be positive")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ConfigError(f"split ratios sum to {self.train + self.val + self.test}, expected 1")


@dataclass(frozen=True)
class WindowSample:
    x: np.ndarray  # (L, N), rows [t, t+L)
    y: np.ndarray  # (T, N), rows [t+L, t+L+T)
    origin_index: int


# Per-dataset horizons and splits; ETT uses 12/4/4-month calendar cuts.
DATASET_PRESETS = {
    "ETTh1": dict(split=SplitSpec(0.6, 0.2, 0.2, "ett_hour"), horizons=(96, 192, 336, 720), frequency="1h"),
    "ETTh2": dict(split=SplitSpec(0.6, 0.2, 0.2, "ett_hour"), horizons=(96, 192, 336, 720), frequency="1h"),
    "ETTm1": dict(split=SplitSpec(0.6, 0.2, 0.2, "ett_minute"), horizons=(96, 192, 336, 720), frequency="15min"),
    "ETTm2": dict(split=SplitSpec(0.6, 0.2, 0.2, "ett_minute"), horizons=(96, 192, 336, 720), frequency="15min"),
    "Weather": dict(split=SplitSpec(0.7, 0.1, 0.2), horizons=(96, 192, 336, 720), frequency="10min"),
    "ECL": dict(split=SplitSpec(0.7, 0.1, 0.2), horizons=(96, 192, 336, 720), frequency="1h"),
    "Traffic": dict(split=SplitSpec(0.7, 0.1, 0.2), horizons=(96, 192, 336, 720), frequency="1h"),
    "Solar": dict(split=SplitSpec(0.7, 0.1, 0.2), horizons=(96, 192, 336, 720), frequency="10min"),
    "PEMS03": dict(split=SplitSpec(0.6, 0.2, 0.2), horizons=(12, 24, 48, 96), frequency="5min"),
    "PEMS04": dict(split=SplitSpec(0.6, 0.2, 0.2), horizons=(12, 24, 48, 96), frequency="5min"),
    "PEMS07": dict(split=SplitSpec(0.6, 0.2, 0.2), horizons=(12, 24, 48, 96), frequency="5min"),
    "PEMS08": dict(split=SplitSpec(0.6, 0.2, 0.2), horizons=(12, 24, 48, 96), frequency="5min"),
}


def load_csv(path, has_date_column: bool = True, name: str | None = None) -> SeriesDataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"dataset file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row") from None
        skip = 1 if has_date_column else 0
        columns = tuple(h.strip() for h in header[skip:])
        if not columns:
            raise DataError(f"{path}: no numeric columns in header")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{line_no}: expected {len(header)} cells, found {len(row)}")
            try:
                values = [float(cell) for cell in row[skip:]]
            except ValueError:
                bad = next(i for i, c in enumerate(row[skip:]) if not _is_float(c))
                raise DataError(
                    f"{path}:{line_no}: cannot parse {row[skip + bad]!r} in column {columns[bad]!r}"
                ) from None
            if not all(math.isfinite(v) for v in values):
                raise DataError(f"{path}:{line_no}: non-finite value")
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=DTYPE)
    return SeriesDataset(name or path.stem, values, columns)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def save_csv(ds: SeriesDataset, path, with_index_column: bool = True) -> None:
    """Write in the same layout ``load_csv`` reads (optional leading index column)."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow((["step"] if with_index_column else []) + list(ds.column_names))
        for t, row in enumerate(ds.values):
            writer.writerow(([t] if with_index_column else []) + [repr(float(v)) for v in row])


def split_borders(rows: int, spec: SplitSpec, lookback: int) -> list[tuple[int, int]]:
    """Row ranges [start, end) of train, val and test, with val/test starting
    ``lookback`` rows early so their first window ends at the true boundary."""
    if spec.mode == "ratio":
        train_end = math.floor(rows * spec.train + 1e-9)
        test_len = math.floor(rows * spec.test + 1e-9)
        val_end = rows - test_len
    else:
        unit = 30 * 24 * (4 if spec.mode == "ett_minute" else 1)
        train_end, val_end = 12 * unit, 16 * unit
        if rows < 20 * unit:
            raise DataError(f"calendar split needs {20 * unit} rows, dataset has {rows}")
        rows = 20 * unit
    return [(0, train_end), (max(0, train_end - lookback), val_end), (max(0, val_end - lookback), rows)]


def split(ds: SeriesDataset, spec: SplitSpec, lookback: int, horizon: int = 0):
    """Chronological train/val/test datasets (see ``split_borders``)."""
    parts = []
    for label, (start, end) in zip(("train", "val", "test"), split_borders(ds.rows, spec, lookback)):
        if end - start < lookback + horizon or end <= start:
            raise DataError(
                f"{label} segment has {end - start} rows, needs at least {lookback + horizon} (L+T)"
            )
        parts.append(replace(ds, name=f"{ds.name}:{label}", values=ds.values[start:end]))
    return tuple(parts)


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray


def fit_scaler(train: SeriesDataset) -> Scaler:
    if train.rows == 0:
        raise DataError("cannot fit a scaler on an empty split")
    centered, mean = center(train.values, axis=0)
    std = np.sqrt(np.mean(centered * centered, axis=0))
    return Scaler(mean[0], np.maximum(std, 1e-8))


def apply_scaler(ds: SeriesDataset, scaler: Scaler) -> SeriesDataset:
    return ds.with_values((ds.values - scaler.mean) / scaler.std)


def invert_scaler(ds: SeriesDataset, scaler: Scaler) -> SeriesDataset:
    return ds.with_values(ds.values * scaler.std + scaler.mean)


def window_arrays(ds: SeriesDataset, lookback: int, horizon: int, stride: int = 1):
    """All windows stacked: x (n, L, N) and y (n, T, N), as read-only views."""
    need = lookback + horizon
    if ds.rows < need:
        raise DataError(f"{ds.name}: {ds.rows} rows, windows need at least {need}")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    stack = sliding_window_view(ds.values, need, axis=0)[::stride]  # (n, N, L+T)
    stack = np.swapaxes(stack, 1, 2)
    return stack[:, :lookback], stack[:, lookback:]


def windows(
    ds: SeriesDataset, lookback: int, horizon: int, stride: int = 1, shuffle_seed: int | None = None
) -> Iterator[WindowSample]:
    xs, ys = window_arrays(ds, lookback, horizon, stride)
    origins = np.arange(len(xs)) * stride
    order = np.arange(len(xs))
    if shuffle_seed is not None:
        order = make_rng(shuffle_seed).permutation(len(xs))
    for i in order:
        yield WindowSample(xs[i], ys[i], int(origins[i]))


def inject_noise(ds: SeriesDataset, variable_index: int, sigma: float, rng) -> SeriesDataset:
    """Add i.i.d. N(0, sigma^2) to one column, leaving the others untouched."""
    if not 0 <= variable_index < ds.n_vars:
        raise DataError(f"variable index {variable_index} out of range for {ds.n_vars} variables")
    if sigma < 0:
        raise ConfigError("noise sigma must be non-negative")
    values = ds.values.copy()
    if sigma > 0:
        values[:, variable_index] += rng.normal(0.0, sigma, size=ds.rows)
    return ds.with_values(values)


def _synth(rows, n_vars, regime_length, seed, noise, period, ar_coef, ar_scale, lag):
    if n_vars < 2:
        raise ConfigError("synthetic data needs at least two variables")
    if regime_length < 1 or rows < 1:
        raise ConfigError("rows and regime_length must be positive")
    if lag < 0:
        raise ConfigError("lag must be non-negative")
    rng = make_rng(seed)
    warm = lag * (n_vars - 1)
    total = rows + warm
    ar = np.zeros(total)
    shocks = rng.normal(0.0, ar_scale, total)
    for i in range(1, total):
        ar[i] = ar_coef * ar[i - 1] + shocks[i]
    base = np.sin(2.0 * np.pi * (np.arange(total) - warm) / period) + ar
    t = np.arange(rows)
    values = np.empty((rows, n_vars), dtype=DTYPE)
    signs = np.ones((rows, n_vars), dtype=DTYPE)
    values[:, 0] = base[warm:]
    for j in range(1, n_vars):
        offset = rng.integers(0, regime_length)
        start = rng.choice([-1.0, 1.0])
        signs[:, j] = start * np.where(((t + offset) // regime_length) % 2 == 0, 1.0, -1.0)
        delayed = base[warm - j * lag : warm - j * lag + rows]
        values[:, j] = signs[:, j] * delayed + rng.normal(0.0, noise, rows)
    names = ("driver",) + tuple(f"var{j}" for j in range(1, n_vars))
    return SeriesDataset(f"synth_dynamic_corr_{seed}", values, names), signs


def synth_dynamic_corr(
    rows: int,
    n_vars: int,
    regime_length: int = 48,
    seed: int = 0,
    noise: float = 0.1,
    period: int = 24,
    ar_coef: float = 0.9,
    ar_scale: float = 0.3,
    lag: int = 0,
) -> SeriesDataset:
    """Multivariate series whose cross-variable correlation changes sign over time.

    Column 0 is the driver, ``sin(2 pi t / period)`` plus an AR(1) process.
    Column j is ``s_j(t) * driver(t - j * lag) + noise``: with ``lag = 0`` every
    column is a signed noisy copy of the driver, with ``lag > 0`` each column
    trails its left neighbour by ``lag`` steps. The sign ``s_j`` flips every
    ``regime_length`` steps on a per-variable schedule with a random initial
    sign and phase offset.
    """
    return _synth(rows, n_vars, regime_length, seed, noise, period, ar_coef, ar_scale, lag)[0]


def sign_schedule(rows: int, n_vars: int, regime_length: int = 48, seed: int = 0, **kwargs) -> np.ndarray:
    """The (rows, N) sign pattern behind ``synth_dynamic_corr`` with the same arguments."""
    defaults = dict(noise=0.1, period=24, ar_coef=0.9, ar_scale=0.3, lag=0)
    return _synth(rows, n_vars, regime_length, seed, **{**defaults, **kwargs})[1]
