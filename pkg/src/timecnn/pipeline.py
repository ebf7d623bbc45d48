"""End-to-end helpers shared by the CLI and the acceptance checks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (
    Scaler,
    SeriesDataset,
    SplitSpec,
    apply_scaler,
    fit_scaler,
    inject_noise,
    split,
    window_arrays,
)
from .evaluation import MetricReport, count_macs, count_params, evaluate, metrics_from_predictions
from .model import ModelConfig, predict
from .numeric import make_rng
from .train import TrainConfig, TrainResult, train


@dataclass
class PreparedData:
    train: SeriesDataset
    val: SeriesDataset
    test: SeriesDataset
    scaler: Scaler


def prepare(ds: SeriesDataset, spec: SplitSpec, lookback: int, horizon: int) -> PreparedData:
    """Split chronologically, fit the scaler on train only, scale all three."""
    train_raw, val_raw, test_raw = split(ds, spec, lookback, horizon)
    scaler = fit_scaler(train_raw)
    return PreparedData(
        apply_scaler(train_raw, scaler),
        apply_scaler(val_raw, scaler),
        apply_scaler(test_raw, scaler),
        scaler,
    )


@dataclass
class RunOutcome:
    result: TrainResult
    test: MetricReport


def fit_and_test(model_cfg: ModelConfig, data: PreparedData, train_cfg: TrainConfig) -> RunOutcome:
    result = train(model_cfg, data.train, data.val, train_cfg)
    return RunOutcome(result, evaluate(result.params, model_cfg, data.test))


def ablation_table(model_cfg: ModelConfig, data: PreparedData, train_cfg: TrainConfig, variants) -> list[dict]:
    """Train every mixer variant with the same seed and recipe."""
    rows = []
    for kind in variants:
        cfg = model_cfg.replace(mixer=kind)
        outcome = fit_and_test(cfg, data, train_cfg)
        rows.append(
            dict(
                variant=kind,
                mse=outcome.test.mse,
                mae=outcome.test.mae,
                params=count_params(cfg),
                macs=count_macs(cfg),
            )
        )
    return rows


def noise_table(
    outcome: RunOutcome,
    model_cfg: ModelConfig,
    test: SeriesDataset,
    variable: int,
    sigmas,
    seed: int = 0,
) -> list[dict]:
    """Inject noise into the lookback inputs of one variable and score only
    that variable's predictions against clean targets."""
    rows = []
    L, T = model_cfg.lookback, model_cfg.horizon
    _, y_clean = window_arrays(test, L, T)
    for k, sigma in enumerate(sigmas):
        noisy = inject_noise(test, variable, float(sigma), make_rng(seed + k))
        x_noisy, _ = window_arrays(noisy, L, T)
        yhat = predict(x_noisy, outcome.result.params, model_cfg)
        rep = metrics_from_predictions(yhat[..., variable], y_clean[..., variable])
        rows.append(dict(sigma=float(sigma), variable=variable, mse=rep.mse, mae=rep.mae))
    return rows


def lookback_sweep(
    ds: SeriesDataset,
    spec: SplitSpec,
    lookbacks,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> list[dict]:
    """One trained model per lookback; the horizon stays fixed."""
    rows = []
    for lookback in lookbacks:
        cfg = model_cfg.replace(lookback=int(lookback))
        data = prepare(ds, spec, cfg.lookback, cfg.horizon)
        outcome = fit_and_test(cfg, data, train_cfg)
        rows.append(
            dict(
                lookback=cfg.lookback,
                mse=outcome.test.mse,
                mae=outcome.test.mae,
                params=count_params(cfg),
                macs=count_macs(cfg),
            )
        )
    return rows


def naive_last_value(x: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat each window's final observation across the horizon."""
    return np.repeat(x[..., -1:, :], horizon, axis=-2)
