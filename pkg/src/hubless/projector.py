"""The trainable projection MLP: forward pass, exact gradients, Adam.

Three (or more) fully-connected layers, each followed by ReLU; the final
ReLU can be disabled. Weights are plain float64 arrays and every update
returns fresh arrays, so weights can be shared read-only across threads.

Checkpoint format (``weights.bin``):
    magic ``MLPC`` (4 bytes) | version u32=1 | header_len u32 |
    UTF-8 JSON header | float32 little-endian payload.
The header records ``dims`` (layer sizes input->output), ``final_relu``,
``seed``, ``step_count`` and a free-form ``config`` echo. The payload is
W1 (row-major, shape in x out), b1, W2, b2, ... in order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    CacheMismatchError,
    ConfigError,
    DimMismatchError,
    FormatError,
    IoError,
)

CHECKPOINT_MAGIC = b"MLPC"
CHECKPOINT_VERSION = 1


@dataclass
class MlpWeights:
    """Per-layer weight matrices (in x out) and bias vectors."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases):
            raise ConfigError("weights/biases layer count mismatch")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ConfigError(f"layer {k}: bad shapes {w.shape}, {b.shape}")
            if k > 0 and self.weights[k - 1].shape[1] != w.shape[0]:
                raise ConfigError(
                    f"layer {k}: input dim {w.shape[0]} != previous output "
                    f"{self.weights[k - 1].shape[1]}"
                )

    @property
    def dims(self) -> tuple[int, ...]:
        """Layer sizes, input dim first."""
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def zeros_like(self) -> "MlpWeights":
        return MlpWeights(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
        )

    def copy(self) -> "MlpWeights":
        return MlpWeights([w.copy() for w in self.weights],
                          [b.copy() for b in self.biases])

    def quantized_f32(self) -> "MlpWeights":
        """Round every parameter to its float32 value (kept as float64).

        Applied once at the end of training so that the float32
        checkpoint reproduces in-memory results exactly.
        """
        return MlpWeights(
            [w.astype(np.float32).astype(np.float64) for w in self.weights],
            [b.astype(np.float32).astype(np.float64) for b in self.biases],
        )


@dataclass
class ForwardCache:
    """Intermediates from one forward pass, consumed by backward."""

    source: MlpWeights
    inputs: list[np.ndarray]          # input to each layer, 2-D
    preacts: list[np.ndarray]         # pre-activation of each layer, 2-D
    final_relu: bool
    squeezed: bool                    # caller passed a single vector


@dataclass
class AdamState:
    """Bias-corrected Adam moments, shaped like the weights."""

    first: MlpWeights
    second: MlpWeights
    step_count: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, w: MlpWeights, lr: float = 0.001, **kw) -> "AdamState":
        return cls(first=w.zeros_like(), second=w.zeros_like(), lr=lr, **kw)


def init_weights(d: int, hidden_dims, m: int, seed: int) -> MlpWeights:
    """Uniform +-sqrt(6/fan_in) weights, zero biases, seeded."""
    hidden_dims = tuple(int(h) for h in hidden_dims)
    if len(hidden_dims) == 0:
        raise ConfigError("at least one hidden layer is required")
    dims = (int(d),) + hidden_dims + (int(m),)
    if min(dims) < 1:
        raise ConfigError(f"non-positive layer dim in {dims}")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpWeights(weights, biases)


def forward(w: MlpWeights, x, final_relu: bool = True) -> tuple[np.ndarray, ForwardCache]:
    """Map semantic vectors through the MLP.

    ``x`` may be a single vector (d,) or a batch (n, d); the output shape
    follows. ReLU is applied after every layer, optionally excluding the
    last one.
    """
    a = np.asarray(x, dtype=np.float64)
    squeezed = a.ndim == 1
    if squeezed:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != w.dims[0]:
        raise DimMismatchError(f"input shape {np.shape(x)} vs input dim {w.dims[0]}")
    inputs, preacts = [], []
    last = len(w.weights) - 1
    for k, (wk, bk) in enumerate(zip(w.weights, w.biases)):
        inputs.append(a)
        z = a @ wk + bk
        preacts.append(z)
        a = np.maximum(z, 0.0) if (k < last or final_relu) else z
    cache = ForwardCache(w, inputs, preacts, final_relu, squeezed)
    return (a[0] if squeezed else a), cache


def backward(w: MlpWeights, cache: ForwardCache, grad_output) -> MlpWeights:
    """Exact reverse-mode gradients of forward w.r.t. every parameter.

    ``grad_output`` is dLoss/dOutput with the same shape forward
    returned. The ReLU subgradient at exactly 0 is taken as 0.
    """
    if cache.source is not w:
        raise CacheMismatchError("cache was produced by different weights")
    g = np.asarray(grad_output, dtype=np.float64)
    if cache.squeezed:
        g = g[None, :]
    if g.shape != (cache.inputs[0].shape[0], w.dims[-1]):
        raise DimMismatchError(f"grad_output shape {g.shape} does not match forward")
    grads = w.zeros_like()
    last = len(w.weights) - 1
    for k in range(last, -1, -1):
        if k < last or cache.final_relu:
            g = g * (cache.preacts[k] > 0.0)
        grads.weights[k] += cache.inputs[k].T @ g
        grads.biases[k] += g.sum(axis=0)
        if k > 0:
            g = g @ w.weights[k].T
    return grads


def adam_step(w: MlpWeights, grads: MlpWeights, state: AdamState) -> tuple[MlpWeights, AdamState]:
    """One bias-corrected Adam update; returns new weights and state."""
    if grads.dims != w.dims:
        raise DimMismatchError(f"gradient dims {grads.dims} vs weights {w.dims}")
    t = state.step_count + 1
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    new_w, new_b = [], []
    new_m = state.first.zeros_like()
    new_v = state.first.zeros_like()
    for k in range(len(w.weights)):
        for attr, out in (("weights", new_w), ("biases", new_b)):
            p = getattr(w, attr)[k]
            g = getattr(grads, attr)[k]
            m = state.beta1 * getattr(state.first, attr)[k] + (1 - state.beta1) * g
            v = state.beta2 * getattr(state.second, attr)[k] + (1 - state.beta2) * g * g
            getattr(new_m, attr)[k] = m
            getattr(new_v, attr)[k] = v
            out.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return (
        MlpWeights(new_w, new_b),
        replace(state, first=new_m, second=new_v, step_count=t),
    )


def save_checkpoint(w: MlpWeights, path, *, final_relu: bool, seed: int,
                    step_count: int, config: dict | None = None) -> None:
    """Write the checkpoint format described in the module docstring."""
    header = {
        "dims": list(w.dims),
        "final_relu": bool(final_relu),
        "seed": int(seed),
        "step_count": int(step_count),
        "config": config or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = []
    for wk, bk in zip(w.weights, w.biases):
        chunks.append(wk.astype("<f4").tobytes())
        chunks.append(bk.astype("<f4").tobytes())
    blob = (
        CHECKPOINT_MAGIC
        + struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes))
        + header_bytes
        + b"".join(chunks)
    )
    try:
        Path(path).write_bytes(blob)
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[MlpWeights, dict]:
    """Read a checkpoint; returns (weights, header dict)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header ({exc})") from exc
    dims = header.get("dims")
    if not isinstance(dims, list) or len(dims) < 2:
        raise FormatError(f"{path}: header lacks layer dims")
    n_params = sum(
        dims[k] * dims[k + 1] + dims[k + 1] for k in range(len(dims) - 1)
    )
    payload = raw[12 + header_len :]
    if len(payload) != 4 * n_params:
        raise FormatError(
            f"{path}: payload {len(payload)} bytes, expected {4 * n_params}"
        )
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    weights, biases = [], []
    offset = 0
    for k in range(len(dims) - 1):
        size = dims[k] * dims[k + 1]
        weights.append(flat[offset : offset + size].reshape(dims[k], dims[k + 1]))
        offset += size
        biases.append(flat[offset : offset + dims[k + 1]])
        offset += dims[k + 1]
    return MlpWeights(weights, biases), header
