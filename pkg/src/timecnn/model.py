"""The full forecaster: instance norm, cross-variable mixer, variable-token
embedding, residual FFN blocks, final layer norm and linear projection.

Inputs may carry leading batch axes: ``x`` is (..., L, N) and the prediction
is (..., T, N). Embedding, FFN and projection weights are shared by all
variables.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import crosscnn
from .crosscnn import MIXER_KINDS, Mixer
from .errors import ConfigError, FormatError, ShapeError
from .numeric import (
    DTYPE,
    GradTape,
    center,
    dropout,
    dropout_backward,
    ensure_finite,
    gelu_backward,
    gelu_forward,
    layer_norm_backward,
    layer_norm_forward,
    linear,
    linear_backward,
)


@dataclass(frozen=True)
class ModelConfig:
    lookback: int
    horizon: int
    n_vars: int
    d_model: int = 256
    d_ff: int = 512
    n_blocks: int = 2
    dropout: float = 0.1
    ln_eps: float = 1e-5
    instance_norm_eps: float = 1e-5
    mixer: str = "crosscnn"
    use_instance_norm: bool = True
    kernel_init: str = "small-uniform"

    def __post_init__(self):
        for name in ("lookback", "horizon", "n_vars", "d_model", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.n_blocks < 0:
            raise ConfigError(f"n_blocks must be >= 0, got {self.n_blocks}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.ln_eps <= 0 or self.instance_norm_eps <= 0:
            raise ConfigError("eps values must be positive")
        if self.mixer not in MIXER_KINDS:
            raise ConfigError(f"unknown mixer {self.mixer!r}; expected one of {', '.join(MIXER_KINDS)}")

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig(**{**asdict(self), **changes})


@dataclass
class FfnBlockParams:
    ln_gamma: np.ndarray  # (D,)
    ln_beta: np.ndarray  # (D,)
    w1: np.ndarray  # (D, H)
    b1: np.ndarray  # (H,)
    w2: np.ndarray  # (H, D)
    b2: np.ndarray  # (D,)


@dataclass
class TimeCnnParams:
    mixer: Mixer
    embed_w: np.ndarray  # (L, D)
    embed_b: np.ndarray  # (D,)
    blocks: list[FfnBlockParams]
    final_gamma: np.ndarray  # (D,)
    final_beta: np.ndarray  # (D,)
    proj_w: np.ndarray  # (D, T)
    proj_b: np.ndarray  # (T,)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Every parameter array in declaration order."""
        out = [(f"mixer.{k}", v) for k, v in self.mixer.arrays().items()]
        out += [("embed_w", self.embed_w), ("embed_b", self.embed_b)]
        for m, blk in enumerate(self.blocks):
            out += [(f"blocks.{m}.{f.name}", getattr(blk, f.name)) for f in fields(blk)]
        out += [
            ("final_gamma", self.final_gamma),
            ("final_beta", self.final_beta),
            ("proj_w", self.proj_w),
            ("proj_b", self.proj_b),
        ]
        return out

    def num_params(self) -> int:
        return sum(a.size for _, a in self.named_arrays())

    def map(self, fn) -> "TimeCnnParams":
        """New params with ``fn`` applied to every array."""
        return TimeCnnParams(
            mixer=type(self.mixer)(**{k: fn(v) for k, v in self.mixer.arrays().items()}),
            embed_w=fn(self.embed_w),
            embed_b=fn(self.embed_b),
            blocks=[FfnBlockParams(**{f.name: fn(getattr(b, f.name)) for f in fields(b)}) for b in self.blocks],
            final_gamma=fn(self.final_gamma),
            final_beta=fn(self.final_beta),
            proj_w=fn(self.proj_w),
            proj_b=fn(self.proj_b),
        )

    def copy(self) -> "TimeCnnParams":
        return self.map(np.copy)

    def zeros_like(self) -> "TimeCnnParams":
        return self.map(np.zeros_like)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for _, a in self.named_arrays()])

    def load_vector(self, vec: np.ndarray) -> "TimeCnnParams":
        """Copy of these params with values taken from a flat vector."""
        vec = np.asarray(vec, dtype=DTYPE)
        if vec.size != self.num_params():
            raise ShapeError(f"vector has {vec.size} entries, params need {self.num_params()}")
        offset = 0

        def take(a):
            nonlocal offset
            chunk = vec[offset : offset + a.size].reshape(a.shape).copy()
            offset += a.size
            return chunk

        return self.map(take)


def init_params(config: ModelConfig, rng: np.random.Generator) -> TimeCnnParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for dense layers; LN starts at (1, 0)."""
    L, T, D, H = config.lookback, config.horizon, config.d_model, config.d_ff

    def dense(fan_in, fan_out):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, (fan_in, fan_out)), rng.uniform(-bound, bound, fan_out)

    mixer = crosscnn.init_mixer(config.mixer, L, config.n_vars, rng, config.kernel_init)
    embed_w, embed_b = dense(L, D)
    blocks = []
    for _ in range(config.n_blocks):
        w1, b1 = dense(D, H)
        w2, b2 = dense(H, D)
        blocks.append(FfnBlockParams(np.ones(D), np.zeros(D), w1, b1, w2, b2))
    proj_w, proj_b = dense(D, T)
    return TimeCnnParams(mixer, embed_w, embed_b, blocks, np.ones(D), np.zeros(D), proj_w, proj_b)


def empty_params(config: ModelConfig) -> TimeCnnParams:
    L, T, D, H = config.lookback, config.horizon, config.d_model, config.d_ff
    z = np.zeros
    blocks = [FfnBlockParams(z(D), z(D), z((D, H)), z(H), z((H, D)), z(D)) for _ in range(config.n_blocks)]
    return TimeCnnParams(crosscnn.empty_mixer(config.mixer, L, config.n_vars), z((L, D)), z(D), blocks, z(D), z(D), z((D, T)), z(T))


# --- instance normalization -------------------------------------------------


@dataclass
class InstanceStats:
    mean: np.ndarray  # (..., N)
    std: np.ndarray  # (..., N), never below sqrt(eps)


def instance_norm(x: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, InstanceStats]:
    """Standardize each variable over its L lookback steps, per sample."""
    x = np.asarray(x, dtype=DTYPE)
    centered, mean = center(x, axis=-2)
    std = np.sqrt(np.mean(centered * centered, axis=-2, keepdims=True))
    std = np.maximum(std, math.sqrt(eps))
    return centered / std, InstanceStats(mean=mean[..., 0, :], std=std[..., 0, :])


def instance_denorm(yhat: np.ndarray, stats: InstanceStats) -> np.ndarray:
    if yhat.shape[-1] != stats.mean.shape[-1]:
        raise ShapeError(f"prediction has {yhat.shape[-1]} variables, stats have {stats.mean.shape[-1]}")
    return yhat * stats.std[..., None, :] + stats.mean[..., None, :]


# --- FFN block ----------------------------------------------------------------


def ffn_block_forward(x, blk: FfnBlockParams, p: float, eps: float, training: bool, rng=None, counter=None):
    """``x + Dropout(Dense(Dropout(GELU(Dense(LayerNorm(x))))))`` on (..., N, D) tokens."""
    if x.shape[-1] != blk.w1.shape[0]:
        raise ShapeError(f"ffn block expects width {blk.w1.shape[0]}, got {x.shape[-1]}")
    normed, ln_cache = layer_norm_forward(x, blk.ln_gamma, blk.ln_beta, eps)
    pre = linear(normed, blk.w1, blk.b1)
    act = gelu_forward(pre)
    hidden, mask1 = dropout(act, p, training, rng)
    out = linear(hidden, blk.w2, blk.b2)
    out_d, mask2 = dropout(out, p, training, rng)
    if counter is not None:
        counter.dense(normed, blk.w1)
        counter.dense(hidden, blk.w2)
    cache = dict(blk=blk, p=p, ln=ln_cache, normed=normed, pre=pre, hidden=hidden, mask1=mask1, mask2=mask2)
    return out_d + x, cache


def ffn_block_backward(cache: dict, upstream: np.ndarray):
    """Return (dx, FfnBlockParams of gradients)."""
    blk, p = cache["blk"], cache["p"]
    d_out = dropout_backward(cache["mask2"], p, upstream)
    d_hidden, dw2, db2 = linear_backward(cache["hidden"], blk.w2, d_out)
    d_act = dropout_backward(cache["mask1"], p, d_hidden)
    d_pre = gelu_backward(cache["pre"], d_act)
    d_normed, dw1, db1 = linear_backward(cache["normed"], blk.w1, d_pre)
    dx, dgamma, dbeta = layer_norm_backward(cache["ln"], d_normed)
    return upstream + dx, FfnBlockParams(dgamma, dbeta, dw1, db1, dw2, db2)


# --- losses -------------------------------------------------------------------


def _check_pair(yhat, y):
    if yhat.shape != y.shape:
        raise ShapeError(f"prediction {yhat.shape} vs target {y.shape}")


def training_loss(yhat: np.ndarray, y: np.ndarray) -> float:
    """Squared error summed over variables, averaged over the T horizon steps
    (and over any leading batch axes)."""
    _check_pair(yhat, y)
    diff = yhat - y
    per_sample = np.sum(diff * diff, axis=(-2, -1)) / y.shape[-2]
    return float(np.mean(per_sample))


def training_loss_grad(yhat: np.ndarray, y: np.ndarray) -> np.ndarray:
    _check_pair(yhat, y)
    batch = max(1, int(np.prod(y.shape[:-2])))
    return (2.0 / (y.shape[-2] * batch)) * (yhat - y)


def metric_mse(yhat: np.ndarray, y: np.ndarray) -> float:
    """Per-element mean squared error."""
    _check_pair(yhat, y)
    return float(np.mean((yhat - y) ** 2))


def metric_mae(yhat: np.ndarray, y: np.ndarray) -> float:
    _check_pair(yhat, y)
    return float(np.mean(np.abs(yhat - y)))


# --- full model ---------------------------------------------------------------


class MacCounter:
    """Counts multiply-accumulates from operand shapes as the forward runs."""

    def __init__(self):
        self.total = 0

    def dense(self, x: np.ndarray, w: np.ndarray) -> None:
        self.total += (x.size // x.shape[-1]) * w.shape[0] * w.shape[1]

    def mixer(self, x: np.ndarray, mixer: Mixer) -> None:
        steps, n = x.shape[-2:]
        rows = x.size // n
        if isinstance(mixer, (crosscnn.CrossCnn, crosscnn.OneCnn, crosscnn.CrossLinear)):
            self.total += rows * n * n
        elif isinstance(mixer, crosscnn.TwoDCnn):
            self.total += rows * n * mixer.kernel.size


def forward(
    x: np.ndarray,
    params: TimeCnnParams,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    counter: MacCounter | None = None,
) -> tuple[np.ndarray, GradTape]:
    """Predict (..., T, N) from (..., L, N); eval mode when ``training`` is False."""
    x = np.asarray(x, dtype=DTYPE)
    L, N = config.lookback, config.n_vars
    if x.ndim < 2 or x.shape[-2:] != (L, N):
        raise ShapeError(f"input stage: expected (..., {L}, {N}), got {x.shape}")
    if params.embed_w.shape != (L, config.d_model) or params.proj_w.shape != (config.d_model, config.horizon):
        raise ShapeError("embedding/projection stage: parameter shapes disagree with config")
    if len(params.blocks) != config.n_blocks:
        raise ShapeError(f"ffn stage: {len(params.blocks)} blocks for n_blocks={config.n_blocks}")
    ensure_finite(x, "model input")
    tape = GradTape()
    p = config.dropout if training else 0.0

    stats = None
    if config.use_instance_norm:
        x, stats = instance_norm(x, config.instance_norm_eps)

    if counter is not None:
        counter.mixer(x, params.mixer)
    h, mix_cache = crosscnn.mixer_forward(x, params.mixer, p, training, rng)
    tape.record("mixer", cache=mix_cache)

    tokens = np.swapaxes(h, -1, -2)  # (..., N, L)
    if counter is not None:
        counter.dense(tokens, params.embed_w)
    h = linear(tokens, params.embed_w, params.embed_b)
    tape.record("embed", x=tokens, w=params.embed_w)

    for m, blk in enumerate(params.blocks):
        h, blk_cache = ffn_block_forward(h, blk, p, config.ln_eps, training, rng, counter)
        tape.record("ffn_block", index=m, cache=blk_cache)

    h, ln_cache = layer_norm_forward(h, params.final_gamma, params.final_beta, config.ln_eps)
    tape.record("final_ln", cache=ln_cache)

    if counter is not None:
        counter.dense(h, params.proj_w)
    out = linear(h, params.proj_w, params.proj_b)  # (..., N, T)
    tape.record("project", x=h, w=params.proj_w)
    yhat = np.swapaxes(out, -1, -2)

    if stats is not None:
        yhat = instance_denorm(yhat, stats)
        tape.record("denorm", stats=stats)
    return ensure_finite(yhat, "model output"), tape


def backward(tape: GradTape, dyhat: np.ndarray, config: ModelConfig) -> TimeCnnParams:
    """Walk the tape in reverse and return gradients shaped like the params."""
    grads = {}
    blocks: dict[int, FfnBlockParams] = {}
    g = np.asarray(dyhat, dtype=DTYPE)
    mixer_grads = None
    for op, c in tape.replay():
        if op == "denorm":
            # statistics come from the input only, so only the scale flows back
            g = g * c["stats"].std[..., None, :]
        elif op == "project":
            g_tok = np.swapaxes(g, -1, -2)
            g, grads["proj_w"], grads["proj_b"] = linear_backward(c["x"], c["w"], g_tok)
        elif op == "final_ln":
            g, grads["final_gamma"], grads["final_beta"] = layer_norm_backward(c["cache"], g)
        elif op == "ffn_block":
            g, blocks[c["index"]] = ffn_block_backward(c["cache"], g)
        elif op == "embed":
            g, grads["embed_w"], grads["embed_b"] = linear_backward(c["x"], c["w"], g)
            g = np.swapaxes(g, -1, -2)
        elif op == "mixer":
            g, mixer_grads = crosscnn.mixer_backward(c["cache"], g)
        else:
            raise FormatError(f"unknown tape op {op!r}")
    if mixer_grads is None or len(blocks) != config.n_blocks:
        raise ShapeError("tape does not match the model configuration")
    return TimeCnnParams(
        mixer=mixer_grads,
        embed_w=grads["embed_w"],
        embed_b=grads["embed_b"],
        blocks=[blocks[m] for m in range(config.n_blocks)],
        final_gamma=grads["final_gamma"],
        final_beta=grads["final_beta"],
        proj_w=grads["proj_w"],
        proj_b=grads["proj_b"],
    )


def loss_and_grads(x, y, params, config, training=True, rng=None):
    """Forward, training loss and parameter gradients for one batch."""
    yhat, tape = forward(x, params, config, training, rng)
    loss = training_loss(yhat, y)
    grads = backward(tape, training_loss_grad(yhat, y), config)
    return loss, grads, yhat


def predict(x, params, config, batch_size: int = 256) -> np.ndarray:
    """Eval-mode forward over a stack of windows, chunked to bound memory."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 2:
        return forward(x, params, config)[0]
    return np.concatenate(
        [forward(x[i : i + batch_size], params, config)[0] for i in range(0, len(x), batch_size)]
    )


# --- checkpoints --------------------------------------------------------------

MAGIC = b"TCNN"
FORMAT_VERSION = 1


def checkpoint_bytes(params: TimeCnnParams, config: ModelConfig) -> bytes:
    """Little-endian layout: magic, u32 version, u32-length config JSON, then per
    parameter: u32-length name, u32 ndim, u64 dims, u64 count, float64 data."""
    cfg = json.dumps(asdict(config), sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(cfg)), cfg]
    arrays = params.named_arrays()
    chunks.append(struct.pack("<I", len(arrays)))
    for name, a in arrays:
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}Q", *a.shape))
        chunks.append(struct.pack("<Q", a.size))
        chunks.append(np.ascontiguousarray(a, dtype="<f8").tobytes())
    return b"".join(chunks)


def params_from_bytes(blob: bytes) -> tuple[TimeCnnParams, ModelConfig]:
    view = memoryview(blob)
    pos = 0

    def read(n):
        nonlocal pos
        if pos + n > len(view):
            raise FormatError("checkpoint truncated")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(read(4)) != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", read(4))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    (cfg_len,) = struct.unpack("<I", read(4))
    try:
        config = ModelConfig(**json.loads(bytes(read(cfg_len)).decode("utf-8")))
    except (TypeError, ValueError) as exc:
        raise FormatError(f"bad config block: {exc}") from exc
    template = empty_params(config)
    expected = template.named_arrays()
    (count,) = struct.unpack("<I", read(4))
    if count != len(expected):
        raise FormatError(f"checkpoint has {count} parameter blocks, config implies {len(expected)}")
    values = []
    for exp_name, exp in expected:
        (name_len,) = struct.unpack("<I", read(4))
        name = bytes(read(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<I", read(4))
        shape = struct.unpack(f"<{ndim}Q", read(8 * ndim))
        (size,) = struct.unpack("<Q", read(8))
        if name != exp_name or shape != exp.shape or size != exp.size:
            raise FormatError(f"block {name!r} {shape} disagrees with expected {exp_name!r} {exp.shape}")
        values.append(np.frombuffer(read(8 * size), dtype="<f8").astype(DTYPE).reshape(shape))
    if pos != len(view):
        raise FormatError(f"{len(view) - pos} trailing bytes after last parameter block")
    flat = np.concatenate([v.ravel() for v in values]) if values else np.zeros(0)
    return template.load_vector(flat), config


def save_checkpoint(params: TimeCnnParams, config: ModelConfig, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(params, config))


def load_checkpoint(path) -> tuple[TimeCnnParams, ModelConfig]:
    return params_from_bytes(Path(path).read_bytes())
