"""Adam, the mini-batch training loop with early stopping, and multi-seed runs."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .data import SeriesDataset, window_arrays
from .errors import ConfigError, DataError, NonFiniteError, ShapeError
from .evaluation import MetricReport, metrics_from_predictions
from .model import ModelConfig, TimeCnnParams, init_params, loss_and_grads, predict

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 30
    patience: int = 5
    lr_decay: float = 0.9
    seed: int = 2023
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int | None = None  # optional cap on optimizer steps

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.patience < 0:
            raise ConfigError("patience must be >= 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: TimeCnnParams) -> "AdamState":
        arrays = [a for _, a in params.named_arrays()]
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(
    params: TimeCnnParams,
    grads: TimeCnnParams,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> TimeCnnParams:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    p_arrays = params.named_arrays()
    g_arrays = grads.named_arrays()
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.m):
        raise ShapeError("params, grads and optimizer state disagree in structure")
    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for (name, p), (_, g), m, v in zip(p_arrays, g_arrays, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"{name}: param {p.shape} vs grad {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params


@dataclass
class TrainResult:
    params: TimeCnnParams
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_val: MetricReport | None = None
    steps: int = 0

    def history_jsonl(self) -> str:
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in self.history)


def _rngs(seed: int):
    init_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.Generator(np.random.PCG64(s)) for s in (init_seq, shuffle_seq, dropout_seq))


def train(
    model_cfg: ModelConfig,
    train_ds: SeriesDataset,
    val_ds: SeriesDataset,
    cfg: TrainConfig,
    init: TimeCnnParams | None = None,
) -> TrainResult:
    """Train from a seeded initialization; return the best-validation params."""
    L, T = model_cfg.lookback, model_cfg.horizon
    if train_ds.n_vars != model_cfg.n_vars or val_ds.n_vars != model_cfg.n_vars:
        raise DataError(f"datasets have {train_ds.n_vars}/{val_ds.n_vars} variables, model expects {model_cfg.n_vars}")
    x_train, y_train = window_arrays(train_ds, L, T)
    x_val, y_val = window_arrays(val_ds, L, T)
    init_rng, shuffle_rng, dropout_rng = _rngs(cfg.seed)
    params = init.copy() if init is not None else init_params(model_cfg, init_rng)
    state = AdamState.for_params(params)
    result = TrainResult(params=params.copy())
    best = math.inf
    bad_epochs = 0
    lr = cfg.lr
    n = len(x_train)
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            try:
                loss, grads, _ = loss_and_grads(x_train[idx], y_train[idx], params, model_cfg, True, dropout_rng)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {b}: {exc}") from exc
            if not math.isfinite(loss):
                raise NonFiniteError(f"non-finite training loss at epoch {epoch}, batch {b}")
            adam_step(params, grads, state, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
            losses.append(loss)
            result.steps += 1
            if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                break
        val = metrics_from_predictions(predict(x_val, params, model_cfg), y_val)
        row = dict(epoch=epoch, train_loss=float(np.mean(losses)), val_mse=val.mse, val_mae=val.mae, lr=lr)
        result.history.append(row)
        log.info("epoch %d train_loss %.6f val_mse %.6f val_mae %.6f", epoch, row["train_loss"], val.mse, val.mae)
        if val.mse < best:
            best = val.mse
            bad_epochs = 0
            result.params = params.copy()
            result.best_epoch = epoch
            result.best_val = val
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break
        if cfg.max_steps is not None and result.steps >= cfg.max_steps:
            break
        lr *= cfg.lr_decay
    return result


@dataclass
class SeedSummary:
    per_seed: list[tuple[int, dict[str, float]]]
    mean: dict[str, float]
    std: dict[str, float]

    def formatted(self, digits: int = 3) -> dict[str, str]:
        return {k: f"{self.mean[k]:.{digits}f}±{self.std[k]:.{digits}f}" for k in self.mean}


def multi_seed_run(seeds: Iterable[int], run: Callable[[int], dict[str, float]]) -> SeedSummary:
    """Call ``run(seed)`` for each seed (independent runs) and aggregate.

    Repeated seeds are run again and each run counted, so ``[s, s]`` has std 0.
    """
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("need at least one seed")
    results = [run(s) for s in seeds]
    keys = sorted(results[0])
    mean, std = {}, {}
    for k in keys:
        vals = np.array([r[k] for r in results])
        mean[k] = float(vals.mean())
        std[k] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
    return SeedSummary(list(zip(seeds, results)), mean, std)
