"""Pearson correlation diagnostics: per-segment matrices and rolling pairs.

Zero-variance inputs give r = 0 and raise the matching flag instead of NaN.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError
from .numeric import DTYPE, center


@dataclass
class SegmentCorrelation:
    matrices: list[np.ndarray]  # one (N, N) matrix per segment
    zero_variance: list[np.ndarray]  # (N,) bool per segment
    segment_length: int


def _pearson_matrix(block: np.ndarray):
    centered, _ = center(block, axis=0)
    ss = np.sum(centered * centered, axis=0)
    flat = ss == 0.0
    cov = centered.T @ centered
    denom = np.sqrt(np.outer(ss, ss))
    r = np.divide(cov, denom, out=np.zeros_like(cov), where=denom > 0)
    np.fill_diagonal(r, np.where(flat, 0.0, 1.0))
    return np.clip(r, -1.0, 1.0), flat


def segment_correlation(x: np.ndarray, segments: int = 4) -> SegmentCorrelation:
    """Split the L rows into ``segments`` equal consecutive blocks (remainder
    dropped) and compute the N x N Pearson matrix of each."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim != 2:
        raise ShapeError(f"expected an (L, N) window, got {x.shape}")
    if segments < 1 or segments > x.shape[0]:
        raise ConfigError(f"cannot cut {x.shape[0]} rows into {segments} segments")
    size = x.shape[0] // segments
    mats, flags = [], []
    for s in range(segments):
        r, flat = _pearson_matrix(x[s * size : (s + 1) * size])
        mats.append(r)
        flags.append(flat)
    return SegmentCorrelation(mats, flags, size)


def rolling_correlation(a: np.ndarray, b: np.ndarray, window: int = 4):
    """Pearson r over every length-``window`` slice; returns (r, zero_variance_flags)."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"rolling correlation needs equal-length vectors, got {a.shape}, {b.shape}")
    if window < 2:
        raise ConfigError("rolling window must be >= 2")
    if a.size < window:
        raise ShapeError(f"series of length {a.size} is shorter than the window {window}")
    wa, _ = center(sliding_window_view(a, window), axis=-1)
    wb, _ = center(sliding_window_view(b, window), axis=-1)
    saa = np.sum(wa * wa, axis=-1)
    sbb = np.sum(wb * wb, axis=-1)
    sab = np.sum(wa * wb, axis=-1)
    denom = np.sqrt(saa * sbb)
    flat = denom == 0.0
    r = np.divide(sab, denom, out=np.zeros_like(sab), where=~flat)
    return np.clip(r, -1.0, 1.0), flat


def write_segment_csv(result: SegmentCorrelation, path) -> None:
    """Long format: segment, i, j, r, zero_variance."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["segment", "i", "j", "r", "zero_variance"])
        for s, (mat, flat) in enumerate(zip(result.matrices, result.zero_variance)):
            n = mat.shape[0]
            for i in range(n):
                for j in range(n):
                    w.writerow([s, i, j, repr(float(mat[i, j])), int(flat[i] or flat[j])])


def write_rolling_csv(rows, path) -> None:
    """Long format: window, i, j, r, zero_variance; ``rows`` yields (i, j, r, flags)."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "i", "j", "r", "zero_variance"])
        for i, j, r, flat in rows:
            for k, (value, f) in enumerate(zip(r, flat)):
                w.writerow([k, i, j, repr(float(value)), int(f)])
