"""Timepoint-independent circular convolution over the variable axis.

Each of the L lookback steps owns a length-N kernel. The N values at a time
step are circularly padded to length 2N-1 and a valid cross-correlation with
that step's kernel produces N outputs, so every output touches every variable
exactly once::

    c[i, j] = sum_k kernels[i, k] * x[i, (j + k + 1) % N]      (0-based)

With this convention ``kernels[i] = e_N`` (last entry one) is the identity.
The mixer output is ``dropout(c) + x``; the skip path is never dropped.

Ablation variants share the same calling convention: a single shared kernel
(``OneCnn``), a dense N x N map per time step (``CrossLinear``), a square
zero-padded 2D kernel over the (time, variable) grid (``TwoDCnn``) and no
mixing at all (``NoMixer``).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, ShapeError
from .numeric import DTYPE, dropout, dropout_backward

MIXER_KINDS = ("crosscnn", "onecnn", "crosslinear", "cnn2d_3", "cnn2d_7", "none")


class _Mixer:
    kind = ""

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def num_params(self) -> int:
        return sum(a.size for a in self.arrays().values())

    def zeros_like(self):
        return type(self)(**{k: np.zeros_like(v) for k, v in self.arrays().items()})


@dataclass
class CrossCnn(_Mixer):
    kernels: np.ndarray  # (L, N): row i is the kernel of time step i
    kind = "crosscnn"


@dataclass
class OneCnn(_Mixer):
    kernel: np.ndarray  # (N,), shared by every time step
    kind = "onecnn"


@dataclass
class CrossLinear(_Mixer):
    weight: np.ndarray  # (N, N)
    bias: np.ndarray  # (N,)
    kind = "crosslinear"


@dataclass
class TwoDCnn(_Mixer):
    kernel: np.ndarray  # (k, k), k odd

    @property
    def kind(self) -> str:
        return f"cnn2d_{self.kernel.shape[0]}"


@dataclass
class NoMixer(_Mixer):
    kind = "none"


CrossCnnParams = CrossCnn
Mixer = CrossCnn | OneCnn | CrossLinear | TwoDCnn | NoMixer


def circular_pad(x: np.ndarray) -> np.ndarray:
    """[x1..xN] -> [x2..xN, x1..xN] along the last axis (length 2N-1)."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise ShapeError("circular_pad needs at least one variable")
    return np.concatenate([x[..., 1:], x], axis=-1)


def _fold_pad_grad(dpad: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of circular_pad."""
    dx = dpad[..., n - 1 :].copy()
    dx[..., 1:] += dpad[..., : n - 1]
    return dx


def crosscnn_point(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Circular convolution of one time step's N values with one kernel."""
    x = np.asarray(x, dtype=DTYPE)
    w = np.asarray(w, dtype=DTYPE)
    if x.ndim != 1 or x.shape != w.shape:
        raise ShapeError(f"crosscnn_point needs two equal-length vectors, got {x.shape}, {w.shape}")
    return crosscnn_conv(x[None, :], w[None, :])[0]


def crosscnn_conv(x: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Convolution term for every time step; ``x`` is (..., L, N), kernels (L, N).

    Terms are accumulated in kernel order k = 0..N-1, matching a plain double
    loop bit for bit.
    """
    n = x.shape[-1]
    if kernels.shape != x.shape[-2:]:
        raise ShapeError(f"kernel bank {kernels.shape} does not match input steps/variables {x.shape[-2:]}")
    padded = circular_pad(x)
    out = np.zeros(x.shape, dtype=DTYPE)
    for k in range(n):
        out += kernels[:, k : k + 1] * padded[..., :, k : k + n]
    return out


def _crosscnn_conv_backward(padded: np.ndarray, kernels: np.ndarray, g: np.ndarray):
    n = g.shape[-1]
    dkernels = np.empty(kernels.shape, dtype=DTYPE)
    dpad = np.zeros(padded.shape, dtype=DTYPE)
    reduce_axes = tuple(range(g.ndim - 2)) + (g.ndim - 1,)
    for k in range(n):
        window = padded[..., :, k : k + n]
        dkernels[:, k] = (g * window).sum(axis=reduce_axes)
        dpad[..., :, k : k + n] += kernels[:, k : k + 1] * g
    return _fold_pad_grad(dpad, n), dkernels


def conv2d_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' 2D cross-correlation over the last two axes."""
    k = kernel.shape[0]
    r = k // 2
    steps, n = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    xp = np.pad(x, pad)
    out = np.zeros(x.shape, dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            out += kernel[a, b] * xp[..., a : a + steps, b : b + n]
    return out


def _conv2d_same_backward(x: np.ndarray, kernel: np.ndarray, g: np.ndarray):
    k = kernel.shape[0]
    r = k // 2
    steps, n = x.shape[-2:]
    pad = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    xp = np.pad(x, pad)
    dxp = np.zeros(xp.shape, dtype=DTYPE)
    dkernel = np.empty(kernel.shape, dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            dkernel[a, b] = np.sum(g * xp[..., a : a + steps, b : b + n])
            dxp[..., a : a + steps, b : b + n] += kernel[a, b] * g
    return dxp[..., r : r + steps, r : r + n], dkernel


def _check_shapes(x: np.ndarray, mixer: Mixer) -> None:
    steps, n = x.shape[-2:]
    if isinstance(mixer, CrossCnn) and mixer.kernels.shape != (steps, n):
        raise ShapeError(f"CrossCnn kernels {mixer.kernels.shape} vs input ({steps}, {n})")
    if isinstance(mixer, OneCnn) and mixer.kernel.shape != (n,):
        raise ShapeError(f"OneCnn kernel {mixer.kernel.shape} vs {n} variables")
    if isinstance(mixer, CrossLinear) and (mixer.weight.shape != (n, n) or mixer.bias.shape != (n,)):
        raise ShapeError(f"CrossLinear weight {mixer.weight.shape} vs {n} variables")
    if isinstance(mixer, TwoDCnn):
        k = mixer.kernel.shape
        if len(k) != 2 or k[0] != k[1] or k[0] % 2 == 0:
            raise ShapeError(f"2D kernel must be square with odd side, got {k}")


def mixer_forward(x: np.ndarray, mixer: Mixer, dropout_p: float = 0.0, training: bool = False, rng=None):
    """Apply a cross-variable mixer with skip connection to ``x`` of shape (..., L, N)."""
    x = np.asarray(x, dtype=DTYPE)
    if x.ndim < 2:
        raise ShapeError(f"mixer input must be (..., L, N), got {x.shape}")
    _check_shapes(x, mixer)
    cache = {"mixer": mixer, "p": dropout_p, "x": x}
    if isinstance(mixer, NoMixer):
        if not 0.0 <= dropout_p < 1.0:
            raise ConfigError(f"dropout p must lie in [0, 1), got {dropout_p}")
        return x, cache
    if isinstance(mixer, CrossCnn):
        mixed = crosscnn_conv(x, mixer.kernels)
    elif isinstance(mixer, OneCnn):
        mixed = crosscnn_conv(x, np.broadcast_to(mixer.kernel, x.shape[-2:]))
    elif isinstance(mixer, CrossLinear):
        mixed = x @ mixer.weight.T + mixer.bias
    elif isinstance(mixer, TwoDCnn):
        mixed = conv2d_same(x, mixer.kernel)
    else:
        raise ConfigError(f"unknown mixer {type(mixer).__name__}")
    dropped, mask = dropout(mixed, dropout_p, training, rng)
    cache["mask"] = mask
    cache["branch"] = dropped  # mixer output before the skip add
    return dropped + x, cache


def mixer_backward(cache: dict, upstream: np.ndarray):
    """Return (dx, dmixer) where dmixer has the same type as the forward mixer."""
    mixer, x = cache["mixer"], cache["x"]
    if upstream.shape != x.shape:
        raise ShapeError(f"mixer_backward: upstream {upstream.shape} vs input {x.shape}")
    if isinstance(mixer, NoMixer):
        return upstream, NoMixer()
    g = dropout_backward(cache["mask"], cache["p"], upstream)
    if isinstance(mixer, CrossCnn):
        dx, dk = _crosscnn_conv_backward(circular_pad(x), mixer.kernels, g)
        grads = CrossCnn(kernels=dk)
    elif isinstance(mixer, OneCnn):
        bank = np.broadcast_to(mixer.kernel, x.shape[-2:])
        dx, dk = _crosscnn_conv_backward(circular_pad(x), bank, g)
        grads = OneCnn(kernel=dk.sum(axis=0))
    elif isinstance(mixer, CrossLinear):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.reshape(-1, x.shape[-1])
        dx = g @ mixer.weight
        grads = CrossLinear(weight=g2.T @ x2, bias=g2.sum(axis=0))
    else:
        dx, dk = _conv2d_same_backward(x, mixer.kernel, g)
        grads = TwoDCnn(kernel=dk)
    return upstream + dx, grads


def init_kernels(lookback: int, n_vars: int, scheme: str = "small-uniform", rng=None, noise: float = 0.01) -> CrossCnn:
    if lookback < 1 or n_vars < 1:
        raise ShapeError(f"kernel bank needs L, N >= 1, got ({lookback}, {n_vars})")
    if scheme == "small-uniform":
        bound = 1.0 / math.sqrt(n_vars)
        return CrossCnn(kernels=rng.uniform(-bound, bound, size=(lookback, n_vars)))
    if scheme == "near-identity":
        kernels = np.zeros((lookback, n_vars), dtype=DTYPE)
        kernels[:, -1] = 1.0
        if noise > 0:
            kernels += rng.uniform(-noise, noise, size=kernels.shape)
        return CrossCnn(kernels=kernels)
    raise ConfigError(f"unknown kernel init scheme {scheme!r}")


def init_mixer(kind: str, lookback: int, n_vars: int, rng, scheme: str = "small-uniform") -> Mixer:
    """Build freshly initialized parameters for any mixer kind in MIXER_KINDS."""
    if kind == "crosscnn":
        return init_kernels(lookback, n_vars, scheme, rng)
    if kind == "onecnn":
        return OneCnn(kernel=init_kernels(1, n_vars, scheme, rng).kernels[0])
    if kind == "crosslinear":
        bound = 1.0 / math.sqrt(n_vars)
        return CrossLinear(
            weight=rng.uniform(-bound, bound, size=(n_vars, n_vars)),
            bias=rng.uniform(-bound, bound, size=n_vars),
        )
    if kind.startswith("cnn2d_"):
        try:
            k = int(kind.removeprefix("cnn2d_"))
        except ValueError:
            raise ConfigError(f"bad 2D kernel size in {kind!r}") from None
        if k < 1 or k % 2 == 0:
            raise ConfigError(f"2D kernel side must be odd, got {k}")
        return TwoDCnn(kernel=rng.uniform(-1.0 / k, 1.0 / k, size=(k, k)))
    if kind == "none":
        return NoMixer()
    raise ConfigError(f"unknown mixer {kind!r}; expected one of {', '.join(MIXER_KINDS)}")


def empty_mixer(kind: str, lookback: int, n_vars: int) -> Mixer:
    """Zero-filled parameters with the right shapes (used when loading checkpoints)."""
    if kind == "crosscnn":
        return CrossCnn(kernels=np.zeros((lookback, n_vars)))
    if kind == "onecnn":
        return OneCnn(kernel=np.zeros(n_vars))
    if kind == "crosslinear":
        return CrossLinear(weight=np.zeros((n_vars, n_vars)), bias=np.zeros(n_vars))
    if kind.startswith("cnn2d_"):
        k = int(kind.removeprefix("cnn2d_"))
        return TwoDCnn(kernel=np.zeros((k, k)))
    if kind == "none":
        return NoMixer()
    raise ConfigError(f"unknown mixer {kind!r}")
