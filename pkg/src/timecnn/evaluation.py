"""Forecast metrics, parameter/MAC accounting and inference timing."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .data import SeriesDataset, window_arrays
from .errors import ConfigError, DataError
from .model import ModelConfig, TimeCnnParams, forward, predict
from .numeric import make_rng


@dataclass
class MetricReport:
    mse: float
    mae: float
    n_windows: int
    per_horizon_mse: list[float] | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_from_predictions(yhat: np.ndarray, y: np.ndarray, per_horizon: bool = False) -> MetricReport:
    if len(y) == 0:
        raise DataError("no windows to evaluate")
    err = yhat - y
    sq = err * err
    return MetricReport(
        mse=float(sq.mean()),
        mae=float(np.abs(err).mean()),
        n_windows=int(len(y)),
        per_horizon_mse=sq.mean(axis=(0, 2)).tolist() if per_horizon else None,
    )


def evaluate(
    params: TimeCnnParams,
    config: ModelConfig,
    dataset: SeriesDataset,
    per_horizon: bool = False,
    batch_size: int = 256,
) -> MetricReport:
    """Eval-mode MSE/MAE over every stride-1 window of ``dataset``."""
    if dataset.rows < config.lookback + config.horizon:
        raise DataError(f"{dataset.name}: too short for a single window")
    x, y = window_arrays(dataset, config.lookback, config.horizon)
    return metrics_from_predictions(predict(x, params, config, batch_size), y, per_horizon)


def mixer_param_count(config: ModelConfig) -> int:
    L, N = config.lookback, config.n_vars
    kind = config.mixer
    if kind == "crosscnn":
        return L * N
    if kind == "onecnn":
        return N
    if kind == "crosslinear":
        return N * N + N
    if kind.startswith("cnn2d_"):
        k = int(kind.removeprefix("cnn2d_"))
        return k * k
    return 0


def count_params(config: ModelConfig) -> int:
    """Closed-form parameter count."""
    L, T, D, H, M = config.lookback, config.horizon, config.d_model, config.d_ff, config.n_blocks
    return mixer_param_count(config) + (L * D + D) + M * (2 * D + D * H + H + H * D + D) + 2 * D + (D * T + T)


def mixer_macs(config: ModelConfig) -> int:
    L, N = config.lookback, config.n_vars
    kind = config.mixer
    if kind in ("crosscnn", "onecnn", "crosslinear"):
        return L * N * N
    if kind.startswith("cnn2d_"):
        k = int(kind.removeprefix("cnn2d_"))
        return L * N * k * k
    return 0


def count_macs(config: ModelConfig) -> int:
    """Multiply-accumulates of one batch-1 forward pass (norms, activations and
    elementwise adds excluded)."""
    L, T, N, D, H, M = (
        config.lookback,
        config.horizon,
        config.n_vars,
        config.d_model,
        config.d_ff,
        config.n_blocks,
    )
    return mixer_macs(config) + N * L * D + M * N * (D * H + H * D) + N * D * T


@dataclass
class ProfileReport:
    param_count: int
    mac_count: int
    warmup_iters: int
    timed_iters: int
    mean_ms: float
    std_ms: float
    p50_ms: float
    p99_ms: float

    def to_dict(self) -> dict:
        return asdict(self)


PROFILE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ProfileReport",
    "type": "object",
    "additionalProperties": False,
    "required": [
        "param_count",
        "mac_count",
        "warmup_iters",
        "timed_iters",
        "mean_ms",
        "std_ms",
        "p50_ms",
        "p99_ms",
    ],
    "properties": {
        "param_count": {"type": "integer", "minimum": 0},
        "mac_count": {"type": "integer", "minimum": 0},
        "warmup_iters": {"type": "integer", "minimum": 1},
        "timed_iters": {"type": "integer", "minimum": 1},
        "mean_ms": {"type": "number", "minimum": 0},
        "std_ms": {"type": "number", "minimum": 0},
        "p50_ms": {"type": "number", "minimum": 0},
        "p99_ms": {"type": "number", "minimum": 0},
    },
}


def time_inference(
    params: TimeCnnParams, config: ModelConfig, warmup: int = 300, trials: int = 10_000, seed: int = 0
) -> ProfileReport:
    """Time batch-1 eval-mode forwards on a fixed random input."""
    if warmup < 1 or trials < 1:
        raise ConfigError("warmup and trials must both be >= 1")
    x = make_rng(seed).standard_normal((config.lookback, config.n_vars))
    for _ in range(warmup):
        forward(x, params, config)
    samples = np.empty(trials)
    for i in range(trials):
        start = time.perf_counter_ns()
        forward(x, params, config)
        samples[i] = (time.perf_counter_ns() - start) / 1e6
    return ProfileReport(
        param_count=params.num_params(),
        mac_count=count_macs(config),
        warmup_iters=warmup,
        timed_iters=trials,
        mean_ms=float(samples.mean()),
        std_ms=float(samples.std(ddof=1)) if trials > 1 else 0.0,
        p50_ms=float(np.percentile(samples, 50)),
        p99_ms=float(np.percentile(samples, 99)),
    )
